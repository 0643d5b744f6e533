import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misalign.errors import ConfigError
from misalign.kstable import (
    TABLE_ALPHAS,
    TABLE_MAX_N,
    asymptotic_critical_value,
    build_table,
    exact_tail_counts,
    ks_critical_value,
    ks_decision,
    load_table,
)
from misalign.survey import ContingencyPair
from oracles import ks_null_distribution, ks_table_cell

SIZES = range(1, TABLE_MAX_N + 1)


def test_formula_values():
    assert asymptotic_critical_value(100, 100, 0.05) == pytest.approx(0.192065, abs=1e-6)
    assert asymptotic_critical_value(100, 100, 0.01) == pytest.approx(0.230181, abs=1e-6)
    # c(0.05) = 1.358102, c(0.01) = 1.627624
    assert asymptotic_critical_value(1, 1, 0.05) / math.sqrt(2) == pytest.approx(1.358102, abs=1e-6)


def test_table_covers_every_cell():
    table = load_table()
    assert len(table) == len(TABLE_ALPHAS) * TABLE_MAX_N * (TABLE_MAX_N + 1) // 2
    for n1, n2 in itertools.combinations_with_replacement(SIZES, 2):
        for a in TABLE_ALPHAS:
            assert (n1, n2, a) in table


def test_table_matches_independent_oracle():
    table = load_table()
    for n1, n2 in itertools.combinations_with_replacement(SIZES, 2):
        for a in TABLE_ALPHAS:
            assert table[(n1, n2, a)] == ks_table_cell(n1, n2, a), (n1, n2, a)


def test_bundled_file_is_reproducible():
    built = {(n1, n2, a): d for n1, n2, a, d in build_table()}
    assert built == load_table()


@pytest.mark.parametrize(
    "n, alpha, expected",
    [
        (10, 0.05, Fraction(7, 10)),
        (10, 0.01, Fraction(8, 10)),
        (5, 0.05, Fraction(1)),
        (5, 0.01, Fraction(1)),
        (4, 0.05, Fraction(1)),
        (4, 0.01, None),
        (3, 0.05, None),
        (3, 0.01, None),
        (15, 0.05, Fraction(8, 15)),
        (15, 0.01, Fraction(9, 15)),
    ],
)
def test_classical_equal_size_cells(n, alpha, expected):
    crit = ks_critical_value(n, n, alpha)
    if expected is None:
        assert crit.untestable and crit.value is None
    else:
        assert crit.exact == expected and crit.method == "table"


@pytest.mark.parametrize("n1, n2", [(2, 3), (3, 3), (2, 4), (4, 4), (3, 5)])
def test_tail_counts_match_brute_force(n1, n2):
    # enumerate every interleaving of the two sorted samples
    dist = {}
    for human in itertools.combinations(range(n1 + n2), n1):
        hs = set(human)
        i = j = gap = 0
        for pos in range(n1 + n2):
            if pos in hs:
                i += 1
            else:
                j += 1
            gap = max(gap, abs(i * n2 - j * n1))
        dist[gap] = dist.get(gap, 0) + 1
    assert ks_null_distribution(n1, n2) == dist
    tails = exact_tail_counts(n1, n2)
    for g in dist:
        assert tails[g] == sum(c for h, c in dist.items() if h >= g)


def test_stricter_alpha_never_lowers_the_bar():
    table = load_table()
    lo, hi = sorted(TABLE_ALPHAS)
    for n1, n2 in itertools.combinations_with_replacement(SIZES, 2):
        strict, loose = table[(n1, n2, lo)], table[(n1, n2, hi)]
        if loose is None:
            assert strict is None
        elif strict is not None:
            assert strict >= loose


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 400), st.integers(1, 400))
def test_formula_symmetric_and_decreasing(n1, n2):
    a = asymptotic_critical_value(n1, n2, 0.05)
    assert a == asymptotic_critical_value(n2, n1, 0.05)
    assert asymptotic_critical_value(n1 + 1, n2, 0.05) < a
    assert asymptotic_critical_value(n1, n2, 0.01) > a


def test_auto_method_switches_on_size():
    assert ks_critical_value(15, 15, 0.05).method == "table"
    assert ks_critical_value(16, 15, 0.05).method == "asymptotic-formula"
    assert ks_critical_value(10, 10, 0.05, method="formula").method == "asymptotic-formula"


def test_table_errors():
    with pytest.raises(ConfigError, match="alpha"):
        ks_critical_value(10, 10, 0.10, method="table")
    with pytest.raises(ConfigError):
        ks_critical_value(20, 10, 0.05, method="table")
    with pytest.raises(ConfigError):
        ks_critical_value(0, 10, 0.05)
    with pytest.raises(ConfigError):
        ks_critical_value(10, 10, 0.05, method="exactish")


def test_decision_paths():
    # D = 0.7 reaches the n=10 cell at 0.05 but not at 0.01
    p = ContingencyPair((8, 1, 1), (1, 2, 7))
    assert ks_decision(p, 0.05).reject
    assert not ks_decision(p, 0.01).reject

    tiny = ContingencyPair((3, 0), (0, 3))
    d = ks_decision(tiny, 0.05)
    assert d.untestable and not d.reject

    big = ContingencyPair((60, 40), (40, 60))
    d = ks_decision(big, 0.05)
    assert d.method == "asymptotic-formula"
    assert d.observed == pytest.approx(0.2)
    assert d.reject == (0.2 > 0.192065)
