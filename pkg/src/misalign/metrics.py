"""Aggregate per-pair decisions into misalignment scores.

* S (per subgroup): share of questions whose test rejects.
* Q (per question): share of subgroups whose test rejects.

Both are stored as integer ratios. Untestable pairs are left out of the
numerator and the denominator and listed separately in the report.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping

import numpy as np
from scipy import stats as sps

from .errors import DataValidationError
from .permutation import TestDecision
from .survey import Subgroup

# (question_id, subgroup, statistic)
DecisionKey = tuple[Hashable, Hashable, str]


@dataclass(frozen=True)
class Ratio:
    rejections: int
    total: int

    @property
    def value(self) -> float:
        return self.rejections / self.total


def _statistics_in(decisions: Mapping[DecisionKey, TestDecision]) -> list[str]:
    return sorted({key[2] for key in decisions})


def _resolve_statistic(decisions, statistic):
    if statistic is not None:
        return statistic
    kinds = _statistics_in(decisions)
    if len(kinds) != 1:
        raise ValueError(f"decision matrix holds statistics {kinds}; pass statistic=")
    return kinds[0]


def _ratio(decisions, axis: int, target, statistic) -> Ratio:
    statistic = _resolve_statistic(decisions, statistic)
    rejections = total = 0
    for key, d in decisions.items():
        if key[axis] != target or key[2] != statistic or d.untestable:
            continue
        total += 1
        rejections += bool(d.reject)
    return Ratio(rejections, total)


def s_counts(decisions, subgroup, statistic: str | None = None) -> Ratio:
    return _ratio(decisions, 1, subgroup, statistic)


def q_counts(decisions, question_id, statistic: str | None = None) -> Ratio:
    return _ratio(decisions, 0, question_id, statistic)


def s_metric(decisions, subgroup, statistic: str | None = None) -> float:
    """Fraction of testable questions rejected for ``subgroup``."""
    r = s_counts(decisions, subgroup, statistic)
    if r.total == 0:
        raise DataValidationError(f"subgroup {subgroup} has no testable questions")
    return r.value


def q_metric(decisions, question_id, statistic: str | None = None) -> float:
    """Fraction of testable subgroups rejected for ``question_id``."""
    r = q_counts(decisions, question_id, statistic)
    if r.total == 0:
        raise DataValidationError(f"question {question_id} has no testable subgroups")
    return r.value


@dataclass
class MisalignmentReport:
    s_by_subgroup: dict[str, dict[Hashable, Ratio]]
    q_by_question: dict[str, dict[Hashable, Ratio]]
    entropy_by_question: dict[Hashable, float]
    decisions: dict[DecisionKey, TestDecision]
    wasserstein_by_question: dict[Hashable, float] | None = None
    config_echo: dict = field(default_factory=dict)
    excluded: list[dict] = field(default_factory=list)

    def statistics(self) -> list[str]:
        return sorted(self.q_by_question)

    def s_values(self, statistic: str) -> dict[Hashable, float]:
        return {k: r.value for k, r in self.s_by_subgroup[statistic].items()}

    def q_values(self, statistic: str) -> dict[Hashable, float]:
        return {k: r.value for k, r in self.q_by_question[statistic].items()}

    # ------------------------------------------------------------------ io
    def to_dict(self) -> dict:
        def ratios(table):
            return {
                stat: [
                    {"key": str(k), "value": r.value, "rejections": r.rejections, "total": r.total}
                    for k, r in rows.items()
                ]
                for stat, rows in table.items()
            }

        return {
            "config": self.config_echo,
            "s_by_subgroup": ratios(self.s_by_subgroup),
            "q_by_question": ratios(self.q_by_question),
            "entropy_by_question": {str(k): v for k, v in self.entropy_by_question.items()},
            "wasserstein_by_question": (
                None
                if self.wasserstein_by_question is None
                else {str(k): v for k, v in self.wasserstein_by_question.items()}
            ),
            "decisions": [
                {"question_id": str(q), "subgroup": str(sg), **d.to_dict()}
                for (q, sg, _), d in self.decisions.items()
            ],
            "excluded": self.excluded,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MisalignmentReport":
        decisions = {}
        for rec in data["decisions"]:
            rec = dict(rec)
            q = rec.pop("question_id")
            sg = Subgroup.parse(rec.pop("subgroup"))
            d = TestDecision.from_dict(rec)
            decisions[(q, sg, d.statistic)] = d
        w = data.get("wasserstein_by_question")
        return build_report(
            decisions,
            data["entropy_by_question"],
            w,
            config_echo=data.get("config", {}),
            excluded=data.get("excluded", []),
        )


def build_report(
    decisions: Mapping[DecisionKey, TestDecision],
    entropy_by_question: Mapping[Hashable, float],
    wasserstein_by_question: Mapping[Hashable, float] | None = None,
    config_echo: dict | None = None,
    excluded: list[dict] | None = None,
) -> MisalignmentReport:
    """Fold a decision matrix into S and Q tables.

    The fold is order independent: keys are sorted before aggregation, and
    rebuilding a report from its own decisions gives an identical report.
    """
    decisions = {key: decisions[key] for key in sorted(decisions, key=lambda k: (str(k[0]), k[1], k[2]))}
    excluded = list(excluded or [])
    s_tab: dict[str, dict[Hashable, Ratio]] = {}
    q_tab: dict[str, dict[Hashable, Ratio]] = {}
    for stat in _statistics_in(decisions):
        subgroups = sorted({k[1] for k in decisions if k[2] == stat})
        questions = sorted({k[0] for k in decisions if k[2] == stat}, key=str)
        s_tab[stat] = {
            sg: r for sg in subgroups if (r := s_counts(decisions, sg, stat)).total > 0
        }
        q_tab[stat] = {
            q: r for q in questions if (r := q_counts(decisions, q, stat)).total > 0
        }
    return MisalignmentReport(
        s_by_subgroup=s_tab,
        q_by_question=q_tab,
        entropy_by_question=dict(sorted(entropy_by_question.items(), key=lambda kv: str(kv[0]))),
        decisions=decisions,
        wasserstein_by_question=(
            None
            if wasserstein_by_question is None
            else dict(sorted(wasserstein_by_question.items(), key=lambda kv: str(kv[0])))
        ),
        config_echo=dict(config_echo or {}),
        excluded=excluded,
    )


@dataclass(frozen=True)
class Correlation:
    points: list[tuple[Hashable, float, float]]
    pearson: float | None
    spearman: float | None

    @property
    def defined(self) -> bool:
        return self.pearson is not None


def correlate(points: list[tuple[Hashable, float, float]]) -> Correlation:
    """Pearson and Spearman coefficients over ``(label, x, y)`` points.

    A constant series leaves both coefficients undefined (``None``).
    """
    if len(points) < 3:
        raise DataValidationError(f"need at least 3 points for a correlation, got {len(points)}")
    x = np.array([p[1] for p in points], dtype=float)
    y = np.array([p[2] for p in points], dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return Correlation(points, None, None)
    pearson = float(sps.pearsonr(x, y)[0])
    spearman = float(sps.spearmanr(x, y)[0])
    return Correlation(points, pearson, spearman)


def entropy_correlation(report: MisalignmentReport, y: str = "Q", statistic: str | None = None) -> Correlation:
    """Scatter of question entropy against Q (per statistic) or Wasserstein."""
    if y == "Q":
        statistic = statistic or _only(report.statistics())
        ys = report.q_values(statistic)
    elif y == "wasserstein":
        if report.wasserstein_by_question is None:
            raise DataValidationError("report carries no Wasserstein distances")
        ys = report.wasserstein_by_question
    else:
        raise ValueError(f"y must be 'Q' or 'wasserstein', got {y!r}")
    points = [
        (q, float(h), float(ys[q]))
        for q, h in report.entropy_by_question.items()
        if q in ys
    ]
    return correlate(points)


def _only(items):
    if len(items) != 1:
        raise ValueError(f"ambiguous choice among {items}")
    return items[0]


# --------------------------------------------------------------------------
# Plot-ready files
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def write_s_csv(report: MisalignmentReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subgroup", "statistic", "alpha", "S", "rejections", "total"])
        alpha = report.config_echo.get("alpha")
        for stat in report.statistics():
            for sg, r in report.s_by_subgroup[stat].items():
                w.writerow([sg, stat, _fmt(alpha), _fmt(r.value), r.rejections, r.total])


def write_q_csv(report: MisalignmentReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        write_q_rows(w, report.q_by_question, report.config_echo.get("alpha"),
                     report.entropy_by_question, report.wasserstein_by_question)


def write_q_rows(writer, q_table, alpha, entropy, wasserstein=None, header=True) -> None:
    if header:
        writer.writerow(["question", "statistic", "alpha", "Q", "entropy", "wasserstein"])
    for stat in sorted(q_table):
        for q, r in q_table[stat].items():
            value = r.value if isinstance(r, Ratio) else r
            w = None if wasserstein is None else wasserstein.get(q)
            writer.writerow([q, stat, _fmt(alpha), _fmt(float(value)), _fmt(entropy.get(q)), _fmt(w)])


DECISION_COLUMNS = [
    "question", "subgroup", "statistic", "method", "observed", "p_value", "critical_value",
    "reject", "alpha", "seed", "num_permutations", "degenerate", "untestable",
]


def write_decisions_csv(report: MisalignmentReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DECISION_COLUMNS)
        for (q, sg, stat), d in report.decisions.items():
            w.writerow([
                q, sg, stat, d.method, _fmt(d.observed), _fmt(d.p_value), _fmt(d.critical_value),
                _fmt(d.reject), _fmt(d.alpha), d.seed, d.num_permutations,
                _fmt(d.degenerate), _fmt(d.untestable),
            ])


def write_report_json(report: MisalignmentReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n", encoding="utf-8")


def read_report_json(path: str | Path) -> MisalignmentReport:
    return MisalignmentReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
