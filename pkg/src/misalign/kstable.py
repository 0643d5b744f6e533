"""Critical values for the two-sample Kolmogorov-Smirnov statistic.

Large samples use the asymptotic rule: reject when

    D > sqrt(-ln(alpha / 2) / 2) * sqrt((n1 + n2) / (n1 * n2)).

Small samples (both sizes up to :data:`TABLE_MAX_N`) use a bundled table of
exact critical values for alpha = 0.05 and 0.01. A table cell is the
smallest attainable D whose exact null tail ``P(D >= d)`` is at most alpha,
under the classical continuous (no ties) null; the test rejects when the
observed D reaches the cell. Cells marked ``untestable`` are those where
even D = 1 is too likely, so no data can reject.

The table is regenerated with ``python -m misalign.kstable``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .permutation import TestDecision
from .stats import ks_statistic
from .survey import ContingencyPair

TABLE_MAX_N = 15
TABLE_ALPHAS = (Fraction(1, 20), Fraction(1, 100))
TABLE_FILE = "ks_critical_values.csv"
UNTESTABLE = "untestable"


@dataclass(frozen=True)
class KsCritical:
    """A rejection threshold for D; ``value`` is None for untestable cells."""

    value: float | None
    method: str  # "asymptotic-formula" | "table" | "untestable"
    exact: Fraction | None = None

    @property
    def untestable(self) -> bool:
        return self.method == UNTESTABLE


def asymptotic_coefficient(alpha: float) -> float:
    return math.sqrt(-0.5 * math.log(alpha / 2.0))


def asymptotic_critical_value(n1: int, n2: int, alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return asymptotic_coefficient(alpha) * math.sqrt((n1 + n2) / (n1 * n2))


# --------------------------------------------------------------------------
# Exact null distribution (used to build the bundled table)
# --------------------------------------------------------------------------

def _paths_inside(n1: int, n2: int, bound: int) -> int:
    """Lattice paths (0,0)->(n1,n2) with ``|i*n2 - j*n1| < bound`` at every node."""
    row = [0] * (n2 + 1)
    for i in range(n1 + 1):
        new = [0] * (n2 + 1)
        for j in range(n2 + 1):
            if abs(i * n2 - j * n1) >= bound:
                continue
            if i == 0 and j == 0:
                new[j] = 1
            else:
                new[j] = (row[j] if i > 0 else 0) + (new[j - 1] if j > 0 else 0)
        row = new
    return row[n2]


def exact_tail_counts(n1: int, n2: int) -> dict[int, int]:
    """Map each attainable integer gap ``g = n1*n2*D`` to the number of
    orderings (out of ``C(n1+n2, n1)``) with ``n1*n2*D >= g``."""
    total = math.comb(n1 + n2, n1)
    gaps = sorted({abs(i * n2 - j * n1) for i in range(n1 + 1) for j in range(n2 + 1)} - {0})
    return {g: total - _paths_inside(n1, n2, g) for g in gaps}


def exact_critical_value(n1: int, n2: int, alpha: Fraction) -> Fraction | None:
    """Smallest attainable D with exact tail probability <= alpha, or None."""
    total = math.comb(n1 + n2, n1)
    best = None
    for g in sorted({abs(i * n2 - j * n1) for i in range(n1 + 1) for j in range(n2 + 1)} - {0}, reverse=True):
        tail = total - _paths_inside(n1, n2, g)
        if Fraction(tail, total) > alpha:
            break
        best = Fraction(g, n1 * n2)
    return best


def build_table(max_n: int = TABLE_MAX_N) -> list[tuple[int, int, Fraction, Fraction | None]]:
    rows = []
    for n1 in range(1, max_n + 1):
        for n2 in range(n1, max_n + 1):
            for alpha in TABLE_ALPHAS:
                rows.append((n1, n2, alpha, exact_critical_value(n1, n2, alpha)))
    return rows


def _alpha_text(alpha: Fraction) -> str:
    return f"{float(alpha):g}"


def write_table(path: str | Path, max_n: int = TABLE_MAX_N) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n1", "n2", "alpha", "critical_d"])
        for n1, n2, alpha, d in build_table(max_n):
            w.writerow([n1, n2, _alpha_text(alpha), UNTESTABLE if d is None else str(d)])


@lru_cache(maxsize=1)
def load_table() -> dict[tuple[int, int, Fraction], Fraction | None]:
    text = resources.files("misalign").joinpath("data", TABLE_FILE).read_text(encoding="utf-8")
    table = {}
    for row in csv.DictReader(text.splitlines()):
        d = row["critical_d"].strip()
        key = (int(row["n1"]), int(row["n2"]), Fraction(row["alpha"]))
        table[key] = None if d == UNTESTABLE else Fraction(d)
    return table


def _table_alpha(alpha: float) -> Fraction:
    for a in TABLE_ALPHAS:
        if math.isclose(alpha, float(a), rel_tol=0, abs_tol=1e-12):
            return a
    raise ConfigError(
        f"the small-sample KS table only covers alpha in {[float(a) for a in TABLE_ALPHAS]}; "
        f"got alpha={alpha}. Use method='formula' for other levels."
    )


def ks_critical_value(n1: int, n2: int, alpha: float, method: str = "auto") -> KsCritical:
    """Rejection threshold for D at level ``alpha``.

    ``method`` is ``"auto"`` (table when both sizes are within the table,
    formula otherwise), ``"table"`` or ``"formula"``.
    """
    if n1 < 1 or n2 < 1:
        raise ConfigError("both sample sizes must be >= 1")
    if method not in ("auto", "table", "formula"):
        raise ConfigError(f"unknown method {method!r}")
    use_table = method == "table" or (method == "auto" and max(n1, n2) <= TABLE_MAX_N)
    if not use_table:
        return KsCritical(asymptotic_critical_value(n1, n2, alpha), "asymptotic-formula")
    if max(n1, n2) > TABLE_MAX_N:
        raise ConfigError(f"table covers sizes up to {TABLE_MAX_N}; use method='formula'")
    a = _table_alpha(alpha)
    d = load_table()[(min(n1, n2), max(n1, n2), a)]
    if d is None:
        return KsCritical(None, UNTESTABLE)
    return KsCritical(float(d), "table", d)


def ks_decision(pair: ContingencyPair, alpha: float, method: str = "auto", seed: int = 0) -> TestDecision:
    """KS test decided against a critical value instead of a permutation null."""
    observed = ks_statistic(pair)
    crit = ks_critical_value(pair.n1, pair.n2, alpha, method)
    if crit.untestable:
        return TestDecision(
            "ks-critical", observed, False, alpha, "table", seed=seed, untestable=True,
        )
    if crit.method == "table":
        zh, zl = pair.arrays()
        gap = np.abs(np.cumsum(zh) * pair.n2 - np.cumsum(zl) * pair.n1).max()
        reject = Fraction(int(gap), pair.n1 * pair.n2) >= crit.exact
    else:
        reject = observed > crit.value
    return TestDecision(
        "ks-critical", observed, bool(reject), alpha, crit.method,
        critical_value=crit.value, seed=seed,
    )


if __name__ == "__main__":
    import sys

    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "data" / TABLE_FILE
    write_table(target)
    print(f"wrote {target}")
