"""Permutation p-values for two-sample statistics on option counts.

Shuffling individual responses between the two groups (sizes fixed) is the
same as drawing how many of the pooled responses for each option land in
the human group, which is a multivariate hypergeometric draw. Both the
Monte-Carlo and the exact path work on these count-splits.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError, EnumerationTooLargeError
from .stats import Statistic, is_degenerate
from .survey import ContingencyPair

DEFAULT_PERMUTATIONS = 10_000
DEFAULT_EXACT_THRESHOLD = 2_000_000
_MC_CHUNK = 50_000
# ties: a permuted statistic within this relative distance of the observed one counts as ">="
_TIE_RTOL = 1e-12

StatisticLike = Union[Statistic, Callable[[ContingencyPair], float]]


@dataclass(frozen=True)
class PermutationConfig:
    num_permutations: int = DEFAULT_PERMUTATIONS
    seed: int = 0
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD
    alpha: float = 0.05

    def __post_init__(self):
        if self.num_permutations < 100:
            raise ConfigError(f"num_permutations must be >= 100, got {self.num_permutations}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.exact_threshold < 0:
            raise ConfigError("exact_threshold must be non-negative")


@dataclass(frozen=True)
class TestDecision:
    """Outcome of one test on one (question, subgroup) pair.

    ``p_value`` is set on the permutation paths and ``critical_value`` on the
    KS critical-value path; never both.
    """

    __test__ = False  # keep pytest from collecting this class

    statistic: str
    observed: float
    reject: bool
    alpha: float
    method: str
    p_value: float | None = None
    critical_value: float | None = None
    seed: int = 0
    num_permutations: int = 0
    degenerate: bool = False
    untestable: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TestDecision":
        return cls(**d)


def as_statistic(stat: StatisticLike) -> Statistic:
    """Wrap a plain ``pair -> float`` function so the engine can batch it."""
    if isinstance(stat, Statistic):
        return stat

    def kernel(zh: np.ndarray, zl: np.ndarray) -> np.ndarray:
        zh2 = np.atleast_2d(zh)
        zl2 = np.atleast_2d(zl)
        out = np.array([stat(ContingencyPair(tuple(a), tuple(b))) for a, b in zip(zh2, zl2)])
        return out.reshape(np.shape(zh)[:-1])

    return Statistic(getattr(stat, "__name__", "custom"), kernel)


def stream_rng(seed: int, *keys: object) -> np.random.Generator:
    """Generator for an independent stream identified by ``keys``.

    Streams depend only on (seed, keys), never on evaluation order, so
    pairs can be processed in parallel without changing results.
    """
    digest = hashlib.sha256("\x1f".join(str(k) for k in keys).encode("utf-8")).digest()
    words = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=words))


def count_splits(pooled, n1: int) -> int:
    """Number of distinct human-side count vectors ``x`` with ``0 <= x <= pooled`` and ``sum(x) == n1``."""
    ways = [1] + [0] * n1
    for c in (int(v) for v in pooled):
        acc = [0] * (n1 + 1)
        run = 0
        # sliding window sum of width c + 1
        for t in range(n1 + 1):
            run += ways[t]
            if t - c - 1 >= 0:
                run -= ways[t - c - 1]
            acc[t] = run
        ways = acc
    return ways[n1]


def enumerate_splits(pooled, n1: int) -> tuple[np.ndarray, np.ndarray]:
    """All count-splits of ``pooled`` with ``n1`` responses on the human side.

    Returns the human-side counts, shape ``(m, k)`` in Fortran order, and
    each split's multivariate hypergeometric probability, shape ``(m,)``.
    """
    pooled = np.asarray(pooled, dtype=np.int64)
    k = len(pooled)
    total = int(pooled.sum())
    if not 0 <= n1 <= total:
        raise ValueError(f"n1={n1} outside [0, {total}]")
    suffix = np.concatenate([np.cumsum(pooled[::-1])[::-1][1:], [0]])
    # log C(c_j, x) for every option j and every x in 0..c_j
    log_choose = [gammaln(c + 1) - gammaln(np.arange(c + 1) + 1) - gammaln(c - np.arange(c + 1) + 1)
                  for c in pooled]

    remaining = np.array([n1], dtype=np.int64)
    logw = np.zeros(1)
    steps = []  # (parent index, chosen count) per option, for back-tracing
    for j in range(k - 1):
        lo = np.maximum(0, remaining - suffix[j])
        hi = np.minimum(pooled[j], remaining)
        reps = hi - lo + 1
        parent = np.repeat(np.arange(remaining.size), reps)
        starts = np.cumsum(reps) - reps
        x = lo[parent] + (np.arange(parent.size) - starts[parent])
        steps.append((parent, x))
        logw = logw[parent] + log_choose[j][x]
        remaining = remaining[parent] - x
    logw = logw + log_choose[k - 1][remaining]

    m = remaining.size
    rows = np.empty((m, k), dtype=np.int64, order="F")
    rows[:, k - 1] = remaining
    index = np.arange(m)
    for j in range(k - 2, -1, -1):
        parent, x = steps[j]
        rows[:, j] = x[index]
        index = parent[index]

    log_norm = gammaln(total + 1) - gammaln(n1 + 1) - gammaln(total - n1 + 1)
    return rows, np.exp(logw - log_norm)


def _at_least(values: np.ndarray, observed: float) -> np.ndarray:
    return values >= observed - _TIE_RTOL * max(1.0, abs(observed))


def exact_permutation_pvalue(
    pair: ContingencyPair,
    statistic: StatisticLike,
    max_splits: int = DEFAULT_EXACT_THRESHOLD,
) -> float:
    """Exact ``P(T >= T_obs)`` under the permutation null.

    Raises :class:`EnumerationTooLargeError` when the pair has more than
    ``max_splits`` distinct count-splits; use Monte-Carlo there.
    """
    stat = as_statistic(statistic)
    pooled = pair.pooled()
    m = count_splits(pooled, pair.n1)
    if m > max_splits:
        raise EnumerationTooLargeError(
            f"{m} count-splits exceed the exact budget of {max_splits}; use the Monte-Carlo path"
        )
    zh, zl = pair.arrays()
    observed = float(stat.kernel(zh, zl))
    splits, weights = enumerate_splits(pooled, pair.n1)
    values = stat.kernel(splits, np.asfortranarray(pooled - splits))
    p = float(weights[_at_least(values, observed)].sum())
    return min(1.0, p)


def monte_carlo_pvalue(
    pair: ContingencyPair,
    statistic: StatisticLike,
    num_permutations: int,
    rng: np.random.Generator,
) -> float:
    """Add-one Monte-Carlo p-value ``(1 + #{T_b >= T_obs}) / (B + 1)``."""
    stat = as_statistic(statistic)
    zh, zl = pair.arrays()
    pooled = zh + zl
    observed = float(stat.kernel(zh, zl))
    hits = 0
    left = num_permutations
    while left > 0:
        size = min(left, _MC_CHUNK)
        draws = rng.multivariate_hypergeometric(pooled, pair.n1, size=size)
        hits += int(_at_least(stat.kernel(draws, pooled - draws), observed).sum())
        left -= size
    return (1 + hits) / (num_permutations + 1)


def permutation_test(
    pair: ContingencyPair,
    statistic: StatisticLike,
    config: PermutationConfig = PermutationConfig(),
    rng: np.random.Generator | None = None,
    label: str | None = None,
) -> TestDecision:
    """Permutation test of equal human/LLM response distributions.

    Enumerates exactly when the pair has at most ``config.exact_threshold``
    count-splits, otherwise draws ``config.num_permutations`` Monte-Carlo
    permutations. Without an explicit ``rng``, the random stream is derived
    from the seed, the pair's identity and the statistic name.
    """
    stat = as_statistic(statistic)
    name = label or stat.name
    observed = stat(pair)
    if is_degenerate(pair):
        return TestDecision(
            name, observed, False, config.alpha, "exact", p_value=1.0,
            seed=config.seed, num_permutations=0, degenerate=True,
        )

    if count_splits(pair.pooled(), pair.n1) <= config.exact_threshold:
        p = exact_permutation_pvalue(pair, stat, max_splits=config.exact_threshold)
        method, b = "exact", 0
    else:
        if rng is None:
            rng = stream_rng(config.seed, pair.question_id, pair.subgroup, name)
        p = monte_carlo_pvalue(pair, stat, config.num_permutations, rng)
        method, b = "monte-carlo", config.num_permutations
    return TestDecision(
        name, observed, p <= config.alpha, config.alpha, method, p_value=p,
        seed=config.seed, num_permutations=b,
    )


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)
