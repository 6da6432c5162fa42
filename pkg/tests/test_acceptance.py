"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line; run with ``pytest -s`` to
see them.
"""

import math
import time

import numpy as np
import pytest

from stein_lab import point_process as pp
from stein_lab import poisson_multi as pm
from stein_lab import poisson_uni as pu
from stein_lab.ctmc import simulate, stationary
from stein_lab.distances import tv
from stein_lab.fitting import fit_rate

MULTI_GRID = (16.0, 32.0, 64.0, 128.0)
PP_GRID = (16.0, 32.0, 64.0, 128.0)


def report(number, title, ok, detail, started, budget=None):
    elapsed = time.perf_counter() - started
    in_time = budget is None or elapsed < budget
    status = "PASS" if ok and in_time else "FAIL"
    limit = "" if budget is None else f" / {budget:g}s"
    print(f"\n[{status}] criterion {number:>2} {title}: {detail} ({elapsed:.2f}s{limit})")
    assert ok, detail
    assert in_time, f"took {elapsed:.1f}s, budget {budget}s"


@pytest.fixture(scope="module")
def multi_problems():
    return [pm.MultiProblem(lam) for lam in MULTI_GRID]


@pytest.fixture(scope="module")
def multi_table(multi_problems):
    t0 = time.perf_counter()
    tab = pm.tv_rate_table(multi_problems)
    tab["build_seconds"] = time.perf_counter() - t0
    return tab


def test_uni_tv_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for lam in (1.0, 2.0, 5.0, 10.0, 20.0, 50.0):
        for k in {1, max(int(lam), 1)}:
            worst = max(worst, pu.verify_tv_identity(pu.UniProblem(lam, k)).rel_err)
    report(1, "uni tv identity", worst <= 1e-8, f"max rel_err={worst:.2e}", t0, 10)


def test_uni_stein_factor_bounds():
    t0 = time.perf_counter()
    violations = []
    for lam in (0.5, 1.0, 2.0, 5.0, 10.0, 50.0):
        sp_ = pu.uni_space(pu.default_truncation(lam))
        G = pu.stein_solution_uni(lam, np.eye(sp_.size), sp_).values
        g_bound, dg_bound = pu.stein_factor_bounds(lam)
        # point indicators attain the Delta g bound exactly
        if np.abs(G).max() > g_bound or np.abs(np.diff(G, axis=0)).max() > dg_bound * (1 + 1e-12):
            violations.append(lam)
    report(2, "uni Stein factor bounds", not violations, f"violations at {violations}", t0, 5)


def test_uni_rate_spreads():
    t0 = time.perf_counter()
    tab = pu.tv_rate_table([25.0, 50.0, 100.0, 200.0, 400.0])
    s1, s2 = tab["spread_sup_dg"], tab["spread_d_tv"]
    report(3, "uni rate spreads", s1 < 0.25 and s2 < 0.30,
           f"spread lam*sup={s1:.3f} (<0.25) d_tv*lam^1.5={s2:.3f} (<0.30)", t0, 30)


def test_multi_sandwich_and_identities(multi_problems, multi_table):
    # charge the shared table to this criterion's budget
    t0 = time.perf_counter() - multi_table["build_seconds"]
    rng = np.random.default_rng(2024)
    fails = []
    worst = {"tv": 0.0, "stein": 0.0, "sym": 0.0, "mean": 0.0}
    for pr, row in zip(multi_problems, multi_table["rows"]):
        lam = pr.lam
        lo, hi = math.log(lam) / (10 * lam), 2 * (1 + 2 * math.log(2 * lam)) / lam
        if not lo <= row["sup_d12"] <= hi:
            fails.append(f"sandwich at {lam:g}")
        worst["tv"] = max(worst["tv"], row["rel_err"])
        for _ in range(50):
            rep = pm.verify_stein_identity(pr, rng.standard_normal(pr.space.size))
            worst["stein"] = max(worst["stein"], rep.rel_err)
        grid = pm.perturbed_law(pr).values.reshape(pr.space.shape)
        worst["sym"] = max(worst["sym"], float(np.abs(grid - grid.T).max()))
        worst["mean"] = max(worst["mean"], float(np.abs(pm.mean_shift(pr)).max()) / pr.means.max())
    tol = {"tv": 1e-8, "stein": 1e-8, "sym": 1e-10, "mean": 1e-8}
    fails += [k for k in worst if worst[k] > tol[k]]
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    report(4, "multi sandwich and identities", not fails, f"{detail} failures={fails}", t0, 300)


def test_multi_rate_spread(multi_table):
    t0 = time.perf_counter()
    s = multi_table["spread_scaled"]
    report(5, "multi rate spread", s < 0.35, f"spread d_tv*lam/(p log lam)={s:.3f} (<0.35)", t0)


def test_point_process():
    t0 = time.perf_counter()
    fails = []
    sym = 0.0
    for L in (4.0, 8.0) + PP_GRID:
        pr = pp.PPProblem(L)
        law = pp.perturbed_law(pr)
        sym = max(sym, abs(law[pr.delta_a] - law[pr.delta_b]) / law[pr.delta_a])
        if max(pp.delta_ab_values(pr).values()) > pp.uniform_bound_pp(L):
            fails.append(f"uniform bound at {L:g}")
    if sym > 1e-10:
        fails.append("symmetry")
    pr = pp.PPProblem(4.0)
    rng = np.random.default_rng(4)
    ident = max(pp.verify_stein_identity(pr, rng.standard_normal(pr.space.size)).rel_err
                for _ in range(50))
    if ident > 1e-8:
        fails.append("identity")
    for f in pp.ab_test_functions():
        if not pp.check_h2_membership(f(pr.space), pr.space)[0]:
            fails.append(f"H2 ({f.m_a},{f.m_b})")
    s = pp.delta_ab_table(PP_GRID)["spread_scaled"]
    if s >= 0.35:
        fails.append("spread")
    report(6, "point process", not fails,
           f"symmetry={sym:.1e} identity={ident:.1e} spread={s:.3f} failures={fails}", t0, 180)


def test_d2_bracket():
    t0 = time.perf_counter()
    kw = dict(n_total_max=20, n_ab_max=3)
    size = pp.PPProblem(4.0, **kw).space.size
    row = pp.d2_rate_table([4.0], **kw)["rows"][0]
    ok = size <= 2000 and bool(row["bracket_ok"])
    report(7, "d2 bracket", ok,
           f"{row['lower']:.4g} <= {row['d2_exact']:.4g} <= {row['upper']:.4g} "
           f"on {size} configurations, LP gap={row['d2_gap']:.1e}", t0, 120)


def test_count_projection():
    t0 = time.perf_counter()
    row = pp.count_tv_table([8.0], n_ab_max=12)["rows"][0]
    tab = pp.count_tv_table(PP_GRID)
    ratios = [r["ratio"] for r in tab["rows"]]
    ok = row["rel_err"] <= 1e-6 and tab["ratio_increasing"]
    report(8, "count projection", ok,
           f"rel_err={row['rel_err']:.1e} ratios={' '.join(f'{x:.3f}' for x in ratios)}", t0)


def test_simulation_cross_check():
    t0 = time.perf_counter()
    gens = {
        "uni": pu.perturbed_uni(pu.UniProblem(2.0, 2, n_max=20)),
        "multi": pm.perturbed_multi(pm.MultiProblem(2.0, n_max=(10, 10))),
        "pp": pp.perturbed_pp(pp.PPProblem(2.0, n_total_max=10, n_ab_max=3)),
    }
    dists = {name: tv(simulate(g, 10**6, seed=9), stationary(g, "gth"))
             for name, g in gens.items()}
    ok = max(dists.values()) < 0.02
    report(9, "Gillespie cross-check", ok,
           " ".join(f"{k}={v:.4f}" for k, v in dists.items()) + " (<0.02)", t0, 60)


def test_rate_fits(multi_table):
    t0 = time.perf_counter()
    uni = pu.tv_rate_table([25.0, 50.0, 100.0, 200.0, 400.0])["rows"]
    d2 = pp.d2_rate_table(PP_GRID, exact=False)["rows"]
    cnt = pp.count_tv_table(PP_GRID)["rows"]
    fits = {
        "multi d_tv/p": (fit_rate([(r["lambda"], r["d_tv"] / r["p"]) for r in multi_table["rows"]]), 1),
        "pp d2 proxy": (fit_rate([(r["lambda"], r["v_star"]) for r in d2]), 1),
        "uni sup": (fit_rate([(r["lambda"], r["sup_dg"]) for r in uni]), 0),
        "count tv": (fit_rate([(r["lambda"], r["count_tv_identity"] / r["p"]) for r in cnt]), 0),
    }
    ok = all(f.q == q and abs(f.p - 1) <= 0.2 for f, q in fits.values())
    detail = " ".join(f"{k}: q={f.q} p={f.p:.3f};" for k, (f, _) in fits.items())
    report(10, "rate fits", ok, detail, t0)
