"""Synthetic ground-truth scenarios for checking the test engine.

Counts are drawn i.i.d. from known categorical distributions, so the
rejection rate of each test can be compared with its nominal level (equal
distributions) or with its expected power (different distributions).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .kstable import ks_decision
from .metrics import build_report
from .permutation import PermutationConfig, binomial_se, permutation_test, stream_rng
from .stats import KS, T1
from .survey import ContingencyPair, Subgroup

SIM_STATISTICS = ("t1", "ks-perm", "ks-critical")
LLM_MODES = ("mode-collapse", "smoothed", "shifted", "matched")


def _check_dist(p: Sequence[float], name: str) -> tuple[float, ...]:
    p = tuple(float(x) for x in p)
    if len(p) < 2 or any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-12:
        raise ConfigError(f"{name} must be a probability vector of length >= 2, got {p}")
    return p


@dataclass(frozen=True)
class SyntheticScenario:
    human_dist: tuple[float, ...]
    llm_dist: tuple[float, ...]
    n1: int
    n2: int
    trials: int = 1000
    seed: int = 0

    def __post_init__(self):
        h = _check_dist(self.human_dist, "human_dist")
        l = _check_dist(self.llm_dist, "llm_dist")
        if len(h) != len(l):
            raise ConfigError("human_dist and llm_dist differ in length")
        if self.n1 < 1 or self.n2 < 1 or self.trials < 1:
            raise ConfigError("n1, n2 and trials must be positive")
        object.__setattr__(self, "human_dist", h)
        object.__setattr__(self, "llm_dist", l)

    @property
    def k(self) -> int:
        return len(self.human_dist)


def sample_pair(scenario: SyntheticScenario, trial_index: int) -> ContingencyPair:
    """Counts for one trial; a function of (seed, trial_index) only."""
    rng = np.random.default_rng([scenario.seed, trial_index])
    zh = rng.multinomial(scenario.n1, scenario.human_dist)
    zl = rng.multinomial(scenario.n2, scenario.llm_dist)
    return ContingencyPair(tuple(zh.tolist()), tuple(zl.tolist()), f"trial-{trial_index}")


@dataclass(frozen=True)
class RateEstimate:
    rejections: int
    trials: int

    @property
    def rate(self) -> float:
        return self.rejections / self.trials

    @property
    def se(self) -> float:
        return binomial_se(self.rate, self.trials)


def _trial_outcome(scenario, statistic, config, alphas, i):
    pair = sample_pair(scenario, i)
    if statistic == "ks-critical":
        return [ks_decision(pair, a).reject for a in alphas]
    stat = T1 if statistic == "t1" else KS
    rng = stream_rng(config.seed, "trial", scenario.seed, i, statistic)
    p = permutation_test(pair, stat, config, rng=rng).p_value
    return [p <= a for a in alphas]


def rejection_rates(
    scenario: SyntheticScenario,
    statistic: str,
    config: PermutationConfig,
    alphas: Sequence[float] | None = None,
    jobs: int = 1,
) -> dict[float, RateEstimate]:
    """Rejection counts over ``scenario.trials`` trials for several levels at once."""
    if statistic not in SIM_STATISTICS:
        raise ConfigError(f"statistic must be one of {SIM_STATISTICS}")
    alphas = tuple(alphas) if alphas else (config.alpha,)

    def run(i):
        return _trial_outcome(scenario, statistic, config, alphas, i)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, range(scenario.trials)))
    else:
        outcomes = [run(i) for i in range(scenario.trials)]
    counts = np.sum(np.array(outcomes, dtype=bool).reshape(scenario.trials, len(alphas)), axis=0)
    return {a: RateEstimate(int(c), scenario.trials) for a, c in zip(alphas, counts)}


def rejection_rate(
    scenario: SyntheticScenario, statistic: str, config: PermutationConfig, jobs: int = 1
) -> RateEstimate:
    """Fraction of trials rejected at ``config.alpha``, with its binomial SE."""
    return rejection_rates(scenario, statistic, config, None, jobs)[config.alpha]


# --------------------------------------------------------------------------
# Entropy sweep
# --------------------------------------------------------------------------

def entropy_bits(p: Sequence[float]) -> float:
    return float(-sum(x * math.log2(x) for x in p if x > 0))


def mixture_grid(k: int, points: int, exponent: float = 3.0) -> list[tuple[float, ...]]:
    """Human distributions from a point mass on option 0 to uniform.

    Point ``i`` mixes weight ``t = (i / (points - 1)) ** exponent`` of the
    uniform distribution into the point mass. Entropy increases strictly
    with ``i``; larger exponents put more points at low entropy, where the
    tests' power changes fastest.
    """
    if points < 2 or k < 2:
        raise ConfigError("need k >= 2 and at least 2 grid points")
    grid = []
    for i in range(points):
        t = (i / (points - 1)) ** exponent
        p = np.full(k, t / k)
        p[0] += 1.0 - t
        p = p / p.sum()
        grid.append(tuple(float(x) for x in p))
    return grid


def _llm_dist(mode: str, human_counts: np.ndarray, human_dist: np.ndarray, strength: float) -> np.ndarray:
    k = len(human_dist)
    point = np.zeros(k)
    point[int(np.argmax(human_counts))] = 1.0
    if mode == "mode-collapse":
        return point
    if mode == "smoothed":
        return (1 - strength) * point + strength * np.full(k, 1.0 / k)
    if mode == "shifted":
        return np.roll(human_dist, 1)
    if mode == "matched":
        return human_dist
    raise ConfigError(f"mode must be one of {LLM_MODES}, got {mode!r}")


@dataclass(frozen=True)
class SweepPoint:
    question: str
    statistic: str
    alpha: float
    q: float
    rejections: int
    total: int
    entropy: float


def entropy_sweep(
    entropy_grid: Sequence[Sequence[float]],
    subgroup_count: int,
    config: PermutationConfig,
    n1: int = 100,
    n2: int = 100,
    mode: str = "mode-collapse",
    statistics: Sequence[str] = ("t1",),
    trials: int = 1,
    seed: int = 0,
    strength: float = 0.5,
) -> list[SweepPoint]:
    """Q per grid point for a simulated misaligned responder.

    For each grid point (a human distribution) and trial, every synthetic
    subgroup draws ``n1`` human answers. The simulated LLM answers ``n2``
    times from a distribution set by ``mode``; in ``mode-collapse`` it always
    picks the modal option of the pooled human answers, whatever the
    subgroup. Decisions go through the regular permutation tests and S/Q
    aggregation; ``Q`` is pooled over trials.
    """
    if mode not in LLM_MODES:
        raise ConfigError(f"mode must be one of {LLM_MODES}, got {mode!r}")
    for s in statistics:
        if s not in SIM_STATISTICS:
            raise ConfigError(f"statistic must be one of {SIM_STATISTICS}")
    grid = [np.asarray(_check_dist(p, f"grid point {g}")) for g, p in enumerate(entropy_grid)]
    labels = [f"grid_{g:02d}" for g in range(len(grid))]

    decisions = {}
    for g, dist in enumerate(grid):
        for t in range(trials):
            rng = stream_rng(seed, "sweep", g, t)
            human = rng.multinomial(n1, dist, size=subgroup_count)
            llm_p = _llm_dist(mode, human.sum(axis=0), dist, strength)
            llm = rng.multinomial(n2, llm_p, size=subgroup_count)
            for s in range(subgroup_count):
                sg = Subgroup("synthetic", f"{t:04d}-{s:03d}")
                pair = ContingencyPair(tuple(human[s].tolist()), tuple(llm[s].tolist()), labels[g], sg)
                for stat in statistics:
                    if stat == "ks-critical":
                        d = ks_decision(pair, config.alpha)
                    else:
                        d = permutation_test(pair, T1 if stat == "t1" else KS, config, label=stat)
                    decisions[(labels[g], sg, stat)] = d

    entropy = {labels[g]: entropy_bits(dist) for g, dist in enumerate(grid)}
    report = build_report(decisions, entropy)
    points = []
    for stat in sorted(report.q_by_question):
        for q, r in report.q_by_question[stat].items():
            points.append(SweepPoint(q, stat, config.alpha, r.value, r.rejections, r.total, entropy[q]))
    return points
