"""End-to-end test run: data -> decision matrix -> report directory."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .errors import ConfigError
from .kstable import ks_decision
from .metrics import (
    MisalignmentReport,
    build_report,
    write_decisions_csv,
    write_q_csv,
    write_report_json,
    write_s_csv,
)
from .permutation import PermutationConfig, TestDecision, permutation_test
from .stats import KS, T1, shannon_entropy, wasserstein_kernel
from .survey import ContingencyPair, QuestionSpec, RefusedPolicy, ResponseSample, build_pair_table

log = logging.getLogger(__name__)

STATISTICS = ("t1", "ks-perm", "ks-critical")


def parse_statistics(text: str) -> tuple[str, ...]:
    if text == "all":
        return STATISTICS
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in names if s not in STATISTICS]
    if bad or not names:
        raise ConfigError(f"unknown statistic(s) {bad}; choose from {list(STATISTICS)} or 'all'")
    return names


@dataclass(frozen=True)
class RunConfig:
    alpha: float = 0.05
    statistics: tuple[str, ...] = STATISTICS
    num_permutations: int = 10_000
    seed: int = 0
    exact_threshold: int = 2_000_000
    refused: str = "include"
    entropy_base: str = "2"
    wasserstein: bool = False
    ks_method: str = "auto"

    def __post_init__(self):
        RefusedPolicy(self.refused)
        for s in self.statistics:
            if s not in STATISTICS:
                raise ConfigError(f"unknown statistic {s!r}")
        if self.entropy_base not in ("2", "e"):
            raise ConfigError("entropy_base must be '2' or 'e'")
        self.permutation_config()  # validates alpha/seed/permutations

    def permutation_config(self) -> PermutationConfig:
        return PermutationConfig(self.num_permutations, self.seed, self.exact_threshold, self.alpha)

    def echo(self) -> dict:
        d = asdict(self)
        d["statistics"] = list(self.statistics)
        d["wasserstein_convention"] = "W1 on option indices, unit spacing, pooled over subgroups"
        d["entropy_convention"] = "human counts pooled over all subgroups of the question"
        d["pvalue_convention"] = "tail P(T >= T_obs); Monte-Carlo uses (1 + hits) / (B + 1)"
        d["untestable_policy"] = "excluded from S/Q numerators and denominators"
        return d


def decide(pair: ContingencyPair, statistic: str, config: RunConfig) -> TestDecision:
    if statistic == "t1":
        return permutation_test(pair, T1, config.permutation_config(), label="t1")
    if statistic == "ks-perm":
        return permutation_test(pair, KS, config.permutation_config(), label="ks-perm")
    if statistic == "ks-critical":
        return ks_decision(pair, config.alpha, config.ks_method, seed=config.seed)
    raise ConfigError(f"unknown statistic {statistic!r}")


def run_tests(
    questions: Sequence[QuestionSpec],
    samples: Iterable[ResponseSample],
    config: RunConfig,
    jobs: int = 1,
) -> MisalignmentReport:
    """Test every (question, subgroup) pair and aggregate the results.

    ``jobs`` only changes wall-clock time; each pair draws from its own
    random stream, so the report is identical for any worker count.
    """
    table = build_pair_table(questions, samples, config.refused)
    tasks = [(key, stat) for key in table.pairs for stat in config.statistics]

    def work(task):
        (qid, sg), stat = task
        return (qid, sg, stat), decide(table.pairs[(qid, sg)], stat, config)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(work, tasks))
    else:
        results = dict(map(work, tasks))

    excluded = [
        {"question": qid, "subgroup": str(sg), "statistic": "all", "reason": reason}
        for (qid, sg), reason in sorted(table.untestable.items())
    ]
    for (qid, sg, stat), d in sorted(results.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        if d.untestable:
            excluded.append({
                "question": qid, "subgroup": str(sg), "statistic": stat,
                "reason": "KS table cell marked untestable: no observed D can reject",
            })
    for item in excluded:
        log.warning("untestable pair (%s, %s) [%s]: %s", item["question"], item["subgroup"],
                    item["statistic"], item["reason"])

    base = "e" if config.entropy_base == "e" else 2
    entropy = {
        qid: shannon_entropy(z, base) for qid, z in table.human_totals.items() if z.sum() > 0
    }
    wasserstein = None
    if config.wasserstein:
        wasserstein = {
            qid: float(wasserstein_kernel(z, table.llm_totals[qid]))
            for qid, z in table.human_totals.items()
            if z.sum() > 0 and table.llm_totals[qid].sum() > 0
        }
    return build_report(results, entropy, wasserstein, config.echo(), excluded)


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_report_dir(
    report: MisalignmentReport,
    out_dir: str | Path,
    manifest: dict,
) -> Path:
    """Write all report files, replacing ``out_dir`` only once everything is written."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        os.chmod(tmp, 0o755)  # mkdtemp creates 0700
        write_report_json(report, tmp / "report.json")
        write_s_csv(report, tmp / "s_metric.csv")
        write_q_csv(report, tmp / "q_metric.csv")
        write_decisions_csv(report, tmp / "decisions.csv")
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        if out_dir.exists():
            shutil.rmtree(out_dir)
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out_dir


def run_manifest(command: str, config: dict, inputs: dict[str, str | Path], started: datetime) -> dict:
    return {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "seed": config.get("seed"),
        "inputs": {name: {"path": str(p), "sha256": file_digest(p)} for name, p in inputs.items()},
        "started_at": started.isoformat(),
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
