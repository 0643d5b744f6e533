"""Two-sample statistics over option counts.

Every statistic has a batched kernel ``f(zh, zl)`` taking integer arrays of
shape ``(..., k)`` and returning shape ``(...)``, so the permutation engine
can score thousands of count-splits in one call. The public functions take
a :class:`~misalign.survey.ContingencyPair` and return a float.

Options are ordered as in the question manifest; that order is the ordinal
mapping for the CDF-based statistics (KS and Wasserstein).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DataValidationError
from .survey import ContingencyPair

Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _as_counts(z) -> np.ndarray:
    return np.asarray(z, dtype=np.int64)


def _sizes(zh: np.ndarray, zl: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n1 = _column_sum(zh)
    n2 = _column_sum(zl)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise DataValidationError("both samples need at least one response")
    return n1, n2


# kernels loop over the short option axis; trailing-axis reductions are slow

def _column_sum(z: np.ndarray) -> np.ndarray:
    total = z[..., 0].copy()
    for j in range(1, z.shape[-1]):
        total += z[..., j]
    return total


def t1_kernel(zh: np.ndarray, zl: np.ndarray) -> np.ndarray:
    """Chi-squared style homogeneity statistic.

    Uses the algebraically equivalent form
    ``sum_j (Z_j n2 - Z'_j n1)^2 / (n1 n2 (Z_j + Z'_j))`` so the numerators
    stay integral; options nobody chose contribute 0.
    """
    zh = _as_counts(zh)
    zl = _as_counts(zl)
    n1, n2 = _sizes(zh, zl)
    scale = (n1 * n2).astype(np.float64)
    out = np.zeros(zh.shape[:-1], dtype=np.float64)
    for j in range(zh.shape[-1]):
        pooled = zh[..., j] + zl[..., j]
        diff = (zh[..., j] * n2 - zl[..., j] * n1).astype(np.float64)
        denom = scale * pooled
        out += np.divide(diff * diff, denom, out=np.zeros_like(diff), where=pooled > 0)
    return out


def _cdf_gaps(zh: np.ndarray, zl: np.ndarray):
    # yields the integer gap n1*n2*|F_H - F_LLM| at each option but the last
    zh = _as_counts(zh)
    zl = _as_counts(zl)
    n1, n2 = _sizes(zh, zl)
    ch = np.zeros_like(n1)
    cl = np.zeros_like(n2)
    for j in range(zh.shape[-1] - 1):
        ch = ch + zh[..., j]
        cl = cl + zl[..., j]
        yield np.abs(ch * n2 - cl * n1)


def _scale(zh, zl) -> np.ndarray:
    zh = _as_counts(zh)
    zl = _as_counts(zl)
    return (_column_sum(zh) * _column_sum(zl)).astype(np.float64)


def ks_kernel(zh: np.ndarray, zl: np.ndarray) -> np.ndarray:
    best = np.zeros(np.shape(zh)[:-1], dtype=np.int64)
    for gap in _cdf_gaps(zh, zl):
        np.maximum(best, gap, out=best)
    return best / _scale(zh, zl)


def wasserstein_kernel(zh: np.ndarray, zl: np.ndarray) -> np.ndarray:
    total = np.zeros(np.shape(zh)[:-1], dtype=np.int64)
    for gap in _cdf_gaps(zh, zl):
        total += gap
    return total / _scale(zh, zl)


@dataclass(frozen=True)
class Statistic:
    """A named statistic usable by the permutation engine."""

    name: str
    kernel: Kernel

    def __call__(self, pair: ContingencyPair) -> float:
        zh, zl = pair.arrays()
        return float(self.kernel(zh, zl))


T1 = Statistic("t1", t1_kernel)
KS = Statistic("ks", ks_kernel)
WASSERSTEIN = Statistic("wasserstein", wasserstein_kernel)


def t1_statistic(pair: ContingencyPair) -> float:
    return T1(pair)


def ks_statistic(pair: ContingencyPair) -> float:
    """Largest absolute gap between the two empirical CDFs, in [0, 1]."""
    return KS(pair)


def wasserstein_1d(pair: ContingencyPair) -> float:
    """W1 distance on the option-index line with unit spacing.

    Equal to the L1 distance between the two CDFs; bounded by ``k - 1``.
    """
    return WASSERSTEIN(pair)


def empirical_cdf(counts) -> np.ndarray:
    counts = _as_counts(counts)
    if counts.ndim != 1 or np.any(counts < 0):
        raise DataValidationError("counts must be a 1-D vector of non-negative integers")
    total = counts.sum()
    if total == 0:
        raise DataValidationError("empirical CDF of an empty sample")
    cdf = np.cumsum(counts) / total
    cdf[-1] = 1.0
    return cdf


def shannon_entropy(counts, base: float | str = 2) -> float:
    """Shannon entropy of the count proportions, with 0 log 0 = 0.

    ``base`` is 2 (bits) or ``"e"`` (nats); any positive number also works.
    """
    counts = _as_counts(counts)
    total = counts.sum()
    if total == 0 or np.any(counts < 0):
        raise DataValidationError("entropy needs non-negative counts with a positive total")
    if base == "e":
        log_base = 1.0
    else:
        base = float(base)
        if base <= 0 or base == 1:
            raise DataValidationError(f"invalid log base {base}")
        log_base = math.log(base)
    p = counts[counts > 0] / total
    h = float(-(p * np.log(p)).sum() / log_base)
    return max(h, 0.0)


def is_degenerate(pair: ContingencyPair) -> bool:
    """True when the pooled responses all fall on a single option."""
    return int(np.count_nonzero(pair.pooled())) <= 1
