import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import poisson

from stein_lab import point_process as pp
from stein_lab.ctmc import stationary
from stein_lab.distances import d2_exact


@pytest.fixture(scope="module")
def p4():
    return pp.PPProblem(4.0)


@pytest.fixture(scope="module")
def small():
    return pp.PPProblem(4.0, n_total_max=20, n_ab_max=3)


def test_operator(small):
    gen = pp.pp_operator(small)
    sp_ = small.space
    o = sp_.empty_index()
    assert gen.rate(o, sp_.index(small.delta_a)) == pytest.approx(0.25)
    assert gen.row_sum_error() < 1e-14
    pi = stationary(gen)
    X = sp_.counts
    lam = small.carrier.intensity
    direct = np.prod([poisson.pmf(X[:, i], lam[i]) for i in range(3)], axis=0)
    direct /= direct.sum()
    assert np.abs(pi.values - direct).max() < 1e-10
    assert np.abs(pp.pp_reference(small).values - direct).max() < 1e-14


def test_perturbed_rates(small):
    gen = pp.perturbed_pp(small)
    base = pp.pp_operator(small)
    sp_ = small.space
    a, b = small.carrier.index_a, small.carrier.index_b
    ia = sp_.index(small.delta_a)
    ib = sp_.index(small.delta_b)
    assert gen.rate(ia, sp_.index(small.delta(a, b))) == pytest.approx(0.25 + 0.5)
    assert gen.rate(ia, sp_.empty_index()) == pytest.approx(1.5)
    assert gen.rate(ib, sp_.index(small.delta(a, b))) == pytest.approx(0.25 + 0.5)
    diff = (gen.Q - base.Q).tocoo()
    assert set(diff.row[diff.data != 0].tolist()) == {ia, ib}


def test_symmetry(p4):
    law = pp.perturbed_law(p4)
    pa, pb = law[p4.delta_a], law[p4.delta_b]
    assert abs(pa - pb) <= 1e-10 * pa


def test_test_functions(p4):
    sp_ = p4.space
    for f in pp.ab_test_functions():
        h = f(sp_)
        assert h[sp_.empty_index()] == 0
    h11 = pp.ABTestFunction(1, 1)(sp_)
    assert h11[sp_.index(p4.delta(0, 0, 1, 2))] == 0.25
    assert h11[sp_.index(p4.delta(0, 1))] == 0
    with pytest.raises(ValueError):
        pp.ABTestFunction(2, 0)


@pytest.mark.parametrize("lam", [4.0, 8.0])
def test_h2_membership(lam):
    pr = pp.PPProblem(lam)
    for f in pp.ab_test_functions():
        ok, worst = pp.check_h2_membership(f(pr.space), pr.space)
        assert ok, worst
    ok, _ = pp.check_h2_membership(np.full(pr.space.size, 0.7), pr.space)
    assert ok


def test_h2_non_member_witness(p4):
    ok, worst = pp.check_h2_membership(2.0 * p4.space.totals, p4.space)
    assert not ok
    gap = abs(sum(worst["xi"]) - sum(worst["eta"]))
    # totals differ, so d1 = 1 and the excess is 2 gap - 1
    assert worst["excess"] == pytest.approx(2 * gap - 1)
    assert gap == p4.space.n_total_max


def test_h2_sampled_branch(p4, monkeypatch):
    monkeypatch.setattr(pp, "H2_EXHAUSTIVE_MAX", 100)
    ok, _ = pp.check_h2_membership(2.0 * p4.space.totals, p4.space, max_pairs=20_000)
    assert not ok
    ok, _ = pp.check_h2_membership(pp.ABTestFunction(1, 1)(p4.space), p4.space,
                                   max_pairs=20_000)
    assert ok


@pytest.mark.parametrize("lam", [4.0, 8.0])
def test_identity(lam):
    pr = pp.PPProblem(lam)
    p = pp.perturbed_law(pr)[pr.delta_a]
    rng = np.random.default_rng(int(lam))
    reps = []
    for _ in range(50):
        g = rng.normal(size=pr.space.size)
        reps.append((pp.verify_stein_identity(pr, g), np.abs(g).max()))
    if lam == 4.0:
        assert max(r.rel_err for r, _ in reps) <= 1e-8
    # at smaller P[delta_a] a random g can make Delta_ab g(0) tiny, so
    # measure the error against p max|g| instead
    assert max(r.abs_err / (p * gmax) for r, gmax in reps) <= 1e-8
    rep = pp.verify_stein_identity(pr, np.full(pr.space.size, 3.0))
    assert abs(rep.lhs) < 1e-15 and rep.rhs == 0
    rep = pp.verify_stein_identity(pr, pr.space.totals.astype(float))
    assert abs(rep.lhs) < 1e-12 and rep.rhs == 0


@given(st.integers(0, 2**31 - 1))
def test_gauge_and_covector(seed):
    pr = pp.PPProblem(4.0, n_total_max=20, n_ab_max=3)
    rng = np.random.default_rng(seed)
    h = rng.random(pr.space.size)
    g = pp.stein_solution_pp(pr, h)
    c = rng.normal() * 10
    v = pp.delta_ab(g, pr)
    assert pp.delta_ab(g + c, pr) == pytest.approx(v, abs=1e-10)
    assert pp.stein_covector_ab(pr) @ h == pytest.approx(v, abs=1e-10)


def test_uniform_bound_values():
    assert pp.uniform_bound_pp(2.0) == 1.0
    L = 64.0
    assert pp.uniform_bound_pp(L) == pytest.approx(5 / (2 * L) * (1 + 2 * math.log(2 * L / 5)))


def test_delta_ab_values(p4):
    v = pp.delta_ab_values(p4)
    assert v[(0, 1)] == pytest.approx(v[(1, 0)], rel=1e-10)
    assert all(x <= pp.uniform_bound_pp(4.0) for x in v.values())
    g0 = pp.stein_solution_pp(p4, np.zeros(p4.space.size))
    assert pp.delta_ab(g0, p4) == 0


def test_d2_bracket(small):
    row = pp.d2_rate_table([4.0], n_total_max=20, n_ab_max=3)["rows"][0]
    assert row["bracket_ok"]
    assert row["lower"] <= row["d2_exact"] <= row["upper"]
    assert row["d2_exact"] == pytest.approx(
        d2_exact(pp.perturbed_law(small), pp.pp_reference(small)))


def test_count_projection_identity():
    row = pp.count_tv_table([8.0], n_ab_max=12)["rows"][0]
    assert row["projection_exact"]
    assert row["rel_err"] <= 1e-6


def test_count_projection_flags_tight_caps():
    row = pp.count_tv_table([64.0])["rows"][0]
    assert not row["projection_exact"]


def test_lumped_carrier_matches_split():
    kw = dict(n_total_max=12, n_ab_max=2)
    one = pp.PPProblem(4.0, s_size=1, **kw)
    three = pp.PPProblem(4.0, s_size=3, **kw)
    p1 = pp.perturbed_law(one)[one.delta_a]
    p3 = pp.perturbed_law(three)[three.delta_a]
    assert p3 == pytest.approx(p1, rel=1e-9)
    v1, v3 = pp.delta_ab_values(one), pp.delta_ab_values(three)
    for key in v1:
        assert v3[key] == pytest.approx(v1[key], rel=1e-8)
