import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from misalign.errors import ConfigError, EnumerationTooLargeError
from misalign.permutation import (
    PermutationConfig,
    TestDecision,
    binomial_se,
    count_splits,
    enumerate_splits,
    exact_permutation_pvalue,
    monte_carlo_pvalue,
    permutation_test,
    stream_rng,
)
from misalign.stats import KS, T1
from misalign.survey import ContingencyPair, Subgroup
from oracles import brute_force_pvalue, ks_direct, t1_direct


def pair(zh, zl, q="q", sg=None):
    return ContingencyPair(tuple(zh), tuple(zl), q, sg)


def test_count_splits_small_cases():
    assert count_splits([2, 2], 2) == 3  # x0 in {0, 1, 2}
    assert count_splits([1, 1, 1], 2) == 3
    assert count_splits([5], 3) == 1
    assert count_splits([20, 20], 20) == 21


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=4), st.data())
def test_enumerate_splits_is_a_distribution(pooled, data):
    total = sum(pooled)
    n1 = data.draw(st.integers(0, total))
    rows, w = enumerate_splits(pooled, n1)
    assert len(rows) == count_splits(pooled, n1)
    assert np.all(rows.sum(axis=1) == n1)
    assert np.all((rows >= 0) & (rows <= np.array(pooled)))
    assert len({tuple(r) for r in rows.tolist()}) == len(rows)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_exact_disjoint_pair():
    # only 2 of the C(4, 2) = 6 labelings separate the options completely
    assert exact_permutation_pvalue(pair([2, 0], [0, 2]), T1) == pytest.approx(1 / 3, abs=1e-12)
    assert brute_force_pvalue([2, 0], [0, 2], t1_direct) == pytest.approx(1 / 3, abs=1e-12)


def test_exact_identical_pair_is_one():
    assert exact_permutation_pvalue(pair([1, 1], [1, 1]), T1) == pytest.approx(1.0, abs=1e-12)


def test_exact_disjoint_ten_each():
    p = exact_permutation_pvalue(pair([10, 0], [0, 10]), T1)
    assert p == pytest.approx(2 / math.comb(20, 10), rel=1e-9)


small_pairs = st.tuples(
    st.lists(st.integers(0, 3), min_size=3, max_size=3),
    st.lists(st.integers(0, 3), min_size=3, max_size=3),
)


@settings(max_examples=40, deadline=None)
@given(small_pairs)
def test_exact_matches_brute_force(zs):
    zh, zl = zs
    assume(0 < sum(zh) and 0 < sum(zl) and sum(zh) + sum(zl) <= 12)
    p = pair(zh, zl)
    assert exact_permutation_pvalue(p, T1) == pytest.approx(
        brute_force_pvalue(zh, zl, t1_direct), abs=1e-9
    )
    assert exact_permutation_pvalue(p, KS) == pytest.approx(
        brute_force_pvalue(zh, zl, ks_direct), abs=1e-9
    )


def test_monte_carlo_close_to_exact():
    p = pair([12, 8, 5, 3], [6, 10, 9, 7])
    exact = exact_permutation_pvalue(p, T1)
    b = 20_000
    mc = monte_carlo_pvalue(p, T1, b, np.random.default_rng(3))
    assert abs(mc - exact) <= 3 * binomial_se(exact, b) + 1 / (b + 1)


def test_monte_carlo_floor():
    b = 200
    mc = monte_carlo_pvalue(pair([40, 0], [0, 40]), T1, b, np.random.default_rng(0))
    assert mc == pytest.approx(1 / (b + 1))


def test_plain_callable_statistic():
    def t1(p):
        return t1_direct(p.z_human, p.z_llm)

    p = pair([3, 1, 2], [0, 3, 2])
    assert exact_permutation_pvalue(p, t1) == pytest.approx(exact_permutation_pvalue(p, T1), abs=1e-12)


def test_enumeration_budget():
    with pytest.raises(EnumerationTooLargeError):
        exact_permutation_pvalue(pair([50, 50, 50], [50, 50, 50]), T1, max_splits=1000)


def test_path_selection():
    p = pair([30, 25, 20, 25], [20, 30, 25, 25])
    exact = permutation_test(p, T1, PermutationConfig())
    mc = permutation_test(p, T1, PermutationConfig(num_permutations=500, exact_threshold=0))
    assert exact.method == "exact" and exact.num_permutations == 0
    assert mc.method == "monte-carlo" and mc.num_permutations == 500
    assert mc.p_value >= 1 / 501


def test_degenerate_pair():
    d = permutation_test(pair([5, 0, 0], [7, 0, 0]), T1)
    assert d.degenerate and d.p_value == 1.0 and not d.reject


def test_reject_matches_alpha():
    d = permutation_test(pair([10, 0], [0, 10]), T1, PermutationConfig(alpha=0.05))
    assert d.reject and d.p_value <= 0.05
    d = permutation_test(pair([6, 4], [5, 5]), T1, PermutationConfig(alpha=0.05))
    assert not d.reject


def test_monte_carlo_deterministic_per_pair():
    cfg = PermutationConfig(num_permutations=300, exact_threshold=0, seed=11)
    sg = Subgroup("age", "65+")
    p = pair([8, 6, 4], [3, 9, 6], "Q1", sg)
    a = permutation_test(p, T1, cfg)
    b = permutation_test(p, T1, cfg)
    assert a == b
    other_seed = permutation_test(p, T1, PermutationConfig(num_permutations=300, exact_threshold=0, seed=12))
    assert other_seed.seed == 12


def test_stream_rng_independent_of_order():
    a = stream_rng(7, "q", "sg", "t1").random(3)
    stream_rng(7, "other").random(10)
    b = stream_rng(7, "q", "sg", "t1").random(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, stream_rng(7, "q", "sg", "ks").random(3))


@pytest.mark.parametrize(
    "kwargs",
    [dict(num_permutations=99), dict(alpha=0.0), dict(alpha=1.0), dict(seed=-1), dict(seed=2**64),
     dict(exact_threshold=-1)],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        PermutationConfig(**kwargs)


def test_decision_roundtrip():
    d = permutation_test(pair([6, 4], [2, 8]), T1)
    assert TestDecision.from_dict(d.to_dict()) == d
