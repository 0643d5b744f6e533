"""Survey data model and CSV/JSON ingestion.

Two CSV layouts are accepted:

* aggregated counts: ``question_id,subgroup,source,option,count``
* per-respondent rows: ``question_id,subgroup,source,option``

Subgroups are flat ``dimension:value`` pairs. A question manifest (JSON array
of ``{question_id, prompt_text, options, refused_label}``) fixes the option
order, which is also the ordinal order used by the KS statistic.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataValidationError, UntestablePairError

log = logging.getLogger(__name__)

AGGREGATED_HEADER = ("question_id", "subgroup", "source", "option", "count")
RESPONDENT_HEADER = ("question_id", "subgroup", "source", "option")


class Source(str, Enum):
    HUMAN = "human"
    LLM = "llm"

    @classmethod
    def parse(cls, text: str) -> "Source":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise DataValidationError(f"source must be 'human' or 'llm', got {text!r}") from None


class DataFormat(str, Enum):
    AGGREGATED = "aggregated"
    RESPONDENT = "respondent"


class RefusedPolicy(str, Enum):
    INCLUDE = "include"
    DROP = "drop"


@dataclass(frozen=True, order=True)
class Subgroup:
    dimension: str
    value: str

    @classmethod
    def parse(cls, text: str) -> "Subgroup":
        dim, sep, value = text.partition(":")
        if not sep or not dim.strip() or not value.strip():
            raise DataValidationError(f"subgroup must look like 'dimension:value', got {text!r}")
        return cls(dim.strip(), value.strip())

    def __str__(self) -> str:
        return f"{self.dimension}:{self.value}"


@dataclass(frozen=True)
class QuestionSpec:
    question_id: str
    options: tuple[str, ...]
    prompt_text: str = ""
    refused_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if len(self.options) < 2:
            raise DataValidationError(f"question {self.question_id!r} needs at least 2 options")
        if any(not str(o).strip() for o in self.options):
            raise DataValidationError(f"question {self.question_id!r} has an empty option label")
        if len(set(self.options)) != len(self.options):
            raise DataValidationError(f"question {self.question_id!r} has duplicate option labels")
        if self.refused_index is not None and not 0 <= self.refused_index < len(self.options):
            raise DataValidationError(
                f"question {self.question_id!r}: refused_index {self.refused_index} out of range"
            )

    @property
    def k(self) -> int:
        return len(self.options)

    def index_of(self, label: str) -> int:
        try:
            return self.options.index(label)
        except ValueError:
            raise DataValidationError(
                f"option {label!r} is not an option of question {self.question_id!r} "
                f"(expected one of {list(self.options)})"
            ) from None


@dataclass(frozen=True)
class ResponseSample:
    """``count`` identical responses; per-respondent rows have ``count == 1``."""

    question_id: str
    source: Source
    subgroup: Subgroup
    option_index: int
    count: int = 1


@dataclass(frozen=True)
class ContingencyPair:
    """Aligned human/LLM option counts for one (question, subgroup)."""

    z_human: tuple[int, ...]
    z_llm: tuple[int, ...]
    question_id: str = ""
    subgroup: Subgroup | None = None

    def __post_init__(self):
        zh = tuple(int(x) for x in self.z_human)
        zl = tuple(int(x) for x in self.z_llm)
        if len(zh) != len(zl):
            raise DataValidationError(f"count vectors differ in length: {len(zh)} vs {len(zl)}")
        if not zh:
            raise DataValidationError("count vectors are empty")
        if min(zh) < 0 or min(zl) < 0:
            raise DataValidationError("counts must be non-negative")
        object.__setattr__(self, "z_human", zh)
        object.__setattr__(self, "z_llm", zl)

    @property
    def k(self) -> int:
        return len(self.z_human)

    @property
    def n1(self) -> int:
        return sum(self.z_human)

    @property
    def n2(self) -> int:
        return sum(self.z_llm)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.z_human, dtype=np.int64), np.asarray(self.z_llm, dtype=np.int64)

    def pooled(self) -> np.ndarray:
        h, l = self.arrays()
        return h + l


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------

def _question_from_record(rec: dict, where: str) -> QuestionSpec:
    try:
        qid = str(rec["question_id"])
        options = [str(o) for o in rec["options"]]
    except (KeyError, TypeError):
        raise DataValidationError(f"{where}: needs 'question_id' and 'options'") from None
    refused_label = rec.get("refused_label")
    refused_index = None
    if refused_label is not None:
        if refused_label not in options:
            raise DataValidationError(
                f"{where}: refused_label {refused_label!r} is not among the options of {qid!r}"
            )
        # the ordinal mapping keeps "Refused" last
        if options[-1] != refused_label:
            log.info("question %s: moving refused option %r to the end", qid, refused_label)
            options.remove(refused_label)
            options.append(refused_label)
        refused_index = len(options) - 1
    return QuestionSpec(qid, tuple(options), str(rec.get("prompt_text", "")), refused_index)


def load_manifest(path: str | Path) -> list[QuestionSpec]:
    path = Path(path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(records, list):
        raise DataValidationError(f"{path}: manifest must be a JSON array")
    questions: dict[str, QuestionSpec] = {}
    for i, rec in enumerate(records):
        q = _question_from_record(rec, f"{path} record {i}")
        prev = questions.get(q.question_id)
        if prev is not None and prev.options != q.options:
            raise DataValidationError(
                f"{path} record {i}: question {q.question_id!r} redefined with different options "
                f"({list(prev.options)} vs {list(q.options)})"
            )
        questions.setdefault(q.question_id, q)
    return list(questions.values())


def dump_manifest(questions: Iterable[QuestionSpec], path: str | Path) -> None:
    out = []
    for q in questions:
        rec = {"question_id": q.question_id, "prompt_text": q.prompt_text, "options": list(q.options)}
        if q.refused_index is not None:
            rec["refused_label"] = q.options[q.refused_index]
        out.append(rec)
    Path(path).write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Response files
# --------------------------------------------------------------------------

def detect_format(path: str | Path) -> DataFormat:
    with open(path, newline="", encoding="utf-8") as fh:
        header = tuple(h.strip() for h in next(csv.reader(fh), []))
    if header == AGGREGATED_HEADER:
        return DataFormat.AGGREGATED
    if header == RESPONDENT_HEADER:
        return DataFormat.RESPONDENT
    raise DataValidationError(f"{path}: unrecognised header {list(header)}")


def _read_rows(path: Path, fmt: DataFormat) -> Iterator[tuple[int, list[str]]]:
    expected = AGGREGATED_HEADER if fmt is DataFormat.AGGREGATED else RESPONDENT_HEADER
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(h.strip() for h in next(reader, []))
        if header != expected:
            raise DataValidationError(
                f"{path} line 1: expected header {','.join(expected)}, got {','.join(header)}"
            )
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise DataValidationError(
                    f"{path} line {reader.line_num}: expected {len(expected)} fields, got {len(row)}"
                )
            yield reader.line_num, [c.strip() for c in row]


def load_dataset(
    path: str | Path,
    format: DataFormat | str | None = None,
    questions: Sequence[QuestionSpec] | None = None,
) -> tuple[list[QuestionSpec], list[ResponseSample]]:
    """Read a response CSV into question specs and (weighted) samples.

    Aggregated rows are kept as one sample carrying ``count``. Without a
    manifest, questions are inferred from the file with options sorted by
    label, which is only sensible for letter-coded options.
    """
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"{path}: no such file")
    fmt = detect_format(path) if format is None else DataFormat(format)

    parsed = []
    for line, row in _read_rows(path, fmt):
        qid, sg, src, label = row[:4]
        if not qid:
            raise DataValidationError(f"{path} line {line}: empty question_id")
        try:
            subgroup = Subgroup.parse(sg)
            source = Source.parse(src)
        except DataValidationError as exc:
            raise DataValidationError(f"{path} line {line}: {exc}") from None
        count = 1
        if fmt is DataFormat.AGGREGATED:
            try:
                count = int(row[4])
            except ValueError:
                raise DataValidationError(f"{path} line {line}: count {row[4]!r} is not an integer") from None
            if count < 0:
                raise DataValidationError(f"{path} line {line}: negative count {count}")
        parsed.append((line, qid, subgroup, source, label, count))

    if questions is None:
        labels: dict[str, set[str]] = defaultdict(set)
        for _, qid, _, _, label, _ in parsed:
            labels[qid].add(label)
        specs = {qid: QuestionSpec(qid, tuple(sorted(ls))) for qid, ls in labels.items() if len(ls) >= 2}
        for qid, ls in labels.items():
            if len(ls) < 2:
                raise DataValidationError(
                    f"{path}: question {qid!r} shows only option {sorted(ls)} and no manifest was given"
                )
    else:
        specs = {q.question_id: q for q in questions}

    samples = []
    for line, qid, subgroup, source, label, count in parsed:
        q = specs.get(qid)
        if q is None:
            raise DataValidationError(f"{path} line {line}: question {qid!r} is not in the manifest")
        try:
            idx = q.index_of(label)
        except DataValidationError as exc:
            raise DataValidationError(f"{path} line {line}: {exc}") from None
        samples.append(ResponseSample(qid, source, subgroup, idx, count))

    return list(specs.values()), samples


def aggregate_counts(samples: Iterable[ResponseSample]) -> dict[tuple[str, Subgroup, Source, int], int]:
    counts: dict[tuple[str, Subgroup, Source, int], int] = defaultdict(int)
    for s in samples:
        counts[(s.question_id, s.subgroup, s.source, s.option_index)] += s.count
    return dict(counts)


def write_aggregated(
    questions: Sequence[QuestionSpec], samples: Iterable[ResponseSample], path: str | Path
) -> None:
    """Write samples as an aggregated-counts CSV in a stable row order."""
    specs = {q.question_id: q for q in questions}
    counts = aggregate_counts(samples)
    rows = sorted(counts.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value, kv[0][3]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATED_HEADER)
        for (qid, sg, src, idx), n in rows:
            w.writerow([qid, str(sg), src.value, specs[qid].options[idx], n])


def expand(samples: Iterable[ResponseSample]) -> Iterator[ResponseSample]:
    """Yield one unit-count sample per respondent."""
    for s in samples:
        unit = ResponseSample(s.question_id, s.source, s.subgroup, s.option_index)
        for _ in range(s.count):
            yield unit


# --------------------------------------------------------------------------
# Contingency tables
# --------------------------------------------------------------------------

def _apply_refused(z: np.ndarray, question: QuestionSpec, policy: RefusedPolicy) -> np.ndarray:
    if policy is RefusedPolicy.DROP and question.refused_index is not None:
        return np.delete(z, question.refused_index)
    return z


def build_contingency(
    samples: Iterable[ResponseSample],
    question: QuestionSpec,
    subgroup: Subgroup,
    refused_policy: RefusedPolicy | str = RefusedPolicy.INCLUDE,
) -> ContingencyPair:
    policy = RefusedPolicy(refused_policy)
    z = {Source.HUMAN: np.zeros(question.k, dtype=np.int64), Source.LLM: np.zeros(question.k, dtype=np.int64)}
    for s in samples:
        if s.question_id != question.question_id or s.subgroup != subgroup:
            continue
        if not 0 <= s.option_index < question.k:
            raise DataValidationError(
                f"option index {s.option_index} out of range for question {question.question_id!r}"
            )
        z[s.source][s.option_index] += s.count
    zh = _apply_refused(z[Source.HUMAN], question, policy)
    zl = _apply_refused(z[Source.LLM], question, policy)
    return _checked_pair(zh, zl, question.question_id, subgroup)


def _checked_pair(zh, zl, qid, subgroup) -> ContingencyPair:
    if zh.sum() == 0:
        raise UntestablePairError(qid, subgroup, "no human responses")
    if zl.sum() == 0:
        raise UntestablePairError(qid, subgroup, "no LLM responses")
    return ContingencyPair(tuple(zh.tolist()), tuple(zl.tolist()), qid, subgroup)


@dataclass
class PairTable:
    """All (question, subgroup) pairs of a dataset, testable or not."""

    pairs: dict[tuple[str, Subgroup], ContingencyPair] = field(default_factory=dict)
    untestable: dict[tuple[str, Subgroup], str] = field(default_factory=dict)
    human_totals: dict[str, np.ndarray] = field(default_factory=dict)
    llm_totals: dict[str, np.ndarray] = field(default_factory=dict)


def build_pair_table(
    questions: Sequence[QuestionSpec],
    samples: Iterable[ResponseSample],
    refused_policy: RefusedPolicy | str = RefusedPolicy.INCLUDE,
) -> PairTable:
    """Tabulate every (question, subgroup) seen on either side in one pass.

    ``human_totals``/``llm_totals`` hold per-question counts summed over all
    subgroups (after the refused policy), used for question-level entropy.
    """
    policy = RefusedPolicy(refused_policy)
    specs = {q.question_id: q for q in questions}
    raw: dict[tuple[str, Subgroup], dict[Source, np.ndarray]] = {}
    for (qid, sg, src, idx), n in aggregate_counts(samples).items():
        q = specs[qid]
        cell = raw.setdefault((qid, sg), {s: np.zeros(q.k, dtype=np.int64) for s in Source})
        cell[src][idx] += n

    table = PairTable()
    for (qid, sg) in sorted(raw):
        q = specs[qid]
        zh = _apply_refused(raw[(qid, sg)][Source.HUMAN], q, policy)
        zl = _apply_refused(raw[(qid, sg)][Source.LLM], q, policy)
        table.human_totals[qid] = table.human_totals.get(qid, 0) + zh
        table.llm_totals[qid] = table.llm_totals.get(qid, 0) + zl
        try:
            table.pairs[(qid, sg)] = _checked_pair(zh, zl, qid, sg)
        except UntestablePairError as exc:
            table.untestable[(qid, sg)] = exc.reason
    return table
