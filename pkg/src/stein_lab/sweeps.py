"""λ-sweeps: one row per grid point, then checks and rate fits over the rows.

Each section has a pure row function (run in a worker pool) and a
``finish`` step that turns the rows into a :class:`SweepResult`.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import point_process as pp
from . import poisson_multi as pm
from . import poisson_uni as pu
from .config import SweepConfig
from .distances import D2_MAX_STATES
from .fitting import fit_rate
from .svg import Series, loglog_svg

__all__ = ["Check", "SweepResult", "run_sweep", "format_float", "COLUMNS",
           "IDENTITY_TOL", "SYMMETRY_TOL", "PP_IDENTITY_MIN_P"]

IDENTITY_TOL = 1e-8
SYMMETRY_TOL = 1e-10
# below this P[delta_a] the random-g identity drowns in rounding of A g
PP_IDENTITY_MIN_P = 1e-6

COLUMNS = {
    "uni": ["lambda", "k", "p_k", "d_tv", "sup_dg", "rel_err", "leak"],
    "multi": ["lambda", "m1", "p", "d_tv", "sup_d12", "rel_err", "identity_err",
              "mean_err", "symmetry_err", "lb_computed", "lb_bound", "lb_status",
              "sup_lower", "sup_upper", "leak"],
    "pp": ["lambda", "p", "p_b", "v_11", "v_star", "bound", "lower", "upper", "d2_exact",
           "count_tv", "count_tv_identity", "count_rel_err", "projection_exact",
           "ratio", "identity_err", "symmetry_err", "leak"],
}


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class SweepResult:
    section: str
    columns: list
    rows: list
    checks: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    plots: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)


def format_float(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.12g}"


def _rng(seed: int, lam: float) -> np.random.Generator:
    # keyed by lambda, so a row does not depend on its grid neighbours
    return np.random.default_rng([seed, int(round(lam * 1000))])


# ---- uni ---------------------------------------------------------------

def uni_row(lam: float, cfg: SweepConfig) -> dict:
    n_max = None if cfg.n_max is None else cfg.n_max[0]
    rep = pu.verify_tv_identity(pu.UniProblem(lam, n_max=n_max))
    return {"lambda": rep.lam, "k": rep.k, "p_k": rep.p_k, "d_tv": rep.lhs,
            "sup_dg": rep.sup_dg, "rel_err": rep.rel_err, "leak": rep.leak}


def uni_finish(rows, cfg) -> SweepResult:
    res = SweepResult("uni", COLUMNS["uni"], rows)
    for r in rows:
        res.checks.append(Check(f"tv identity lambda={format_float(r['lambda'])}",
                                r["rel_err"] <= IDENTITY_TOL,
                                f"rel_err={format_float(r['rel_err'])}"))
    _fit(res, "sup_dg", "sup |Delta g_h(k)|")
    _fit(res, "d_tv", "d_TV(W_k, Po)")
    return res


# ---- multi -------------------------------------------------------------

def multi_row(lam: float, cfg: SweepConfig) -> dict:
    pr = pm.MultiProblem(lam, cfg.mu, cfg.n_max)
    lb = pm.check_mixed_difference_lower_bound(pr)
    sup_d12 = pm.sup_delta12(pr)
    row = {"lambda": pr.lam, "m1": pr.K[0], "sup_d12": sup_d12,
           "lb_computed": lb.computed, "lb_bound": lb.bound,
           "lb_status": ("ok" if lb.ok else "fail") if lb.applicable else "inapplicable",
           "sup_lower": lb.bound, "sup_upper": pm.mixed_difference_bound(pr)}
    nan = float("nan")
    row.update(p=nan, d_tv=nan, rel_err=nan, identity_err=nan, mean_err=nan,
               symmetry_err=nan, leak=nan)
    if pr.mu[0] == pr.mu[1]:
        tab = pm.tv_rate_table([pr])["rows"][0]
        law = pm.perturbed_law(pr)
        rng = _rng(cfg.seed, lam)
        ident = max(pm.verify_stein_identity(pr, rng.standard_normal(pr.space.size)).rel_err
                    for _ in range(cfg.identity_samples))
        grid = law.values.reshape(pr.space.shape)
        sym = float(np.abs(grid - np.swapaxes(grid, 0, 1)).max()) if pr.n_max[0] == pr.n_max[1] else nan
        row.update(p=tab["p"], d_tv=tab["d_tv"], rel_err=tab["rel_err"], identity_err=ident,
                   mean_err=float(np.abs(pm.mean_shift(pr)).max() / pr.means.max()),
                   symmetry_err=sym, leak=tab["leak"])
    return row


def multi_finish(rows, cfg) -> SweepResult:
    res = SweepResult("multi", COLUMNS["multi"], rows)
    if cfg.mu[0] != cfg.mu[1]:
        res.notes.append("mu_1 != mu_2: perturbed-chain columns are not defined")
    for r in rows:
        lam = format_float(r["lambda"])
        if not math.isnan(r["rel_err"]):
            res.checks.append(Check(f"tv identity lambda={lam}", r["rel_err"] <= IDENTITY_TOL,
                                    f"rel_err={format_float(r['rel_err'])}"))
            res.checks.append(Check(f"stein identity lambda={lam}",
                                    r["identity_err"] <= IDENTITY_TOL,
                                    f"max rel_err={format_float(r['identity_err'])} over "
                                    f"{cfg.identity_samples} random g"))
            res.checks.append(Check(f"mean lambda={lam}", r["mean_err"] <= IDENTITY_TOL,
                                    f"mean_err={format_float(r['mean_err'])}"))
            if not math.isnan(r["symmetry_err"]):
                res.checks.append(Check(f"swap symmetry lambda={lam}",
                                        r["symmetry_err"] <= SYMMETRY_TOL,
                                        f"symmetry_err={format_float(r['symmetry_err'])}"))
        if r["lb_status"] != "inapplicable":
            res.checks.append(Check(f"lower bound lambda={lam}", r["lb_status"] == "ok",
                                    f"computed={format_float(r['lb_computed'])} "
                                    f"bound={format_float(r['lb_bound'])}"))
            res.checks.append(Check(f"sandwich lambda={lam}",
                                    r["sup_lower"] <= r["sup_d12"] <= r["sup_upper"],
                                    f"{format_float(r['sup_lower'])} <= "
                                    f"{format_float(r['sup_d12'])} <= {format_float(r['sup_upper'])}"))
        else:
            res.notes.append(f"lambda={lam}: lower-bound precondition fails, row inapplicable")
            res.checks.append(Check(f"upper bound lambda={lam}", r["sup_d12"] <= r["sup_upper"],
                                    f"{format_float(r['sup_d12'])} <= {format_float(r['sup_upper'])}"))
    _fit(res, "sup_d12", "d_TV / P[W = K + e1]")
    pts = [(r["lambda"], r["p"]) for r in rows if r["lambda"] > 1 and r["p"] > 0]
    if len(pts) >= 2:
        slope = np.polyfit(*np.log(np.array(pts)).T, 1)[0]
        res.notes.append(f"P[W = K + e1] ~ lambda^{slope:.3f} (least-squares slope, "
                         f"d = {len(cfg.mu)})")
    return res


# ---- pp ----------------------------------------------------------------

def _pp_kwargs(cfg: SweepConfig) -> dict:
    return {"s_size": cfg.s_size, "n_total_max": cfg.n_total_max, "n_ab_max": cfg.n_ab_max}


def pp_row(lam: float, cfg: SweepConfig) -> dict:
    kw = _pp_kwargs(cfg)
    pr = pp.PPProblem(lam, **kw)
    d2 = pp.d2_rate_table([lam], exact=cfg.d2_exact, **kw)["rows"][0]
    cnt = pp.count_tv_table([lam], **kw)["rows"][0]
    rng = _rng(cfg.seed, lam)
    ident = max(pp.verify_stein_identity(pr, rng.standard_normal(pr.space.size)).rel_err
                for _ in range(cfg.identity_samples))
    return {"lambda": pr.lambda_total, "p": d2["p"], "p_b": d2["p_b"], "v_11": d2["v_11"],
            "v_star": d2["v_star"], "bound": d2["bound"], "lower": d2["lower"],
            "upper": d2["upper"], "d2_exact": d2["d2_exact"], "bracket_ok": d2["bracket_ok"],
            "count_tv": cnt["count_tv"], "count_tv_identity": cnt["count_tv_identity"],
            "count_rel_err": cnt["rel_err"], "projection_exact": cnt["projection_exact"],
            "ratio": cnt["ratio"], "identity_err": ident,
            "symmetry_err": abs(d2["p"] - d2["p_b"]) / d2["p"], "leak": d2["leak"],
            "v_all": pp.delta_ab_values(pr), "count_per_p": cnt["sup_d2g"]}


def pp_finish(rows, cfg) -> SweepResult:
    res = SweepResult("pp", COLUMNS["pp"], rows)
    for r in rows:
        lam = format_float(r["lambda"])
        res.checks.append(Check(f"symmetry lambda={lam}", r["symmetry_err"] <= SYMMETRY_TOL,
                                f"rel diff={format_float(r['symmetry_err'])}"))
        worst = max(r["v_all"].values())
        res.checks.append(Check(f"uniform bound lambda={lam}", worst <= r["bound"],
                                f"max |Delta_ab g_h(0)|={format_float(worst)} "
                                f"bound={format_float(r['bound'])}"))
        if r["p"] > PP_IDENTITY_MIN_P:
            res.checks.append(Check(f"stein identity lambda={lam}",
                                    r["identity_err"] <= IDENTITY_TOL,
                                    f"max rel_err={format_float(r['identity_err'])}"))
        else:
            res.notes.append(f"lambda={lam}: random-g identity reported only "
                             f"(P[delta_a] <= {PP_IDENTITY_MIN_P:g})")
        if r["projection_exact"]:
            res.checks.append(Check(f"count projection lambda={lam}",
                                    r["count_rel_err"] <= 1e-6,
                                    f"rel_err={format_float(r['count_rel_err'])}"))
        else:
            res.notes.append(f"lambda={lam}: a/b caps too tight for the count projection; "
                             "count_tv_identity is authoritative")
        if r["bracket_ok"] is not None:
            res.checks.append(Check(f"d2 bracket lambda={lam}", bool(r["bracket_ok"]),
                                    f"{format_float(r['lower'])} <= {format_float(r['d2_exact'])} "
                                    f"<= {format_float(r['upper'])}"))
    if len(rows) > 1:
        ratios = [r["ratio"] for r in rows]
        res.checks.append(Check("d2 proxy / count tv increasing",
                                bool(np.all(np.diff(ratios) > 0)),
                                " ".join(format_float(x) for x in ratios)))
    _fit(res, "v_star", "d2 proxy / P[delta_a]")
    _fit(res, "count_per_p", "count tv / P[delta_a]")
    for r in rows:
        if r["d2_exact"] is not None and not math.isnan(r["d2_exact"]):
            break
    else:
        res.notes.append(f"d2_exact needs at most {D2_MAX_STATES} configurations")
    return res


# ---- shared ------------------------------------------------------------

def _fit(res: SweepResult, column: str, label: str) -> None:
    pts = [(r["lambda"], r[column]) for r in res.rows
           if r["lambda"] > 1 and r[column] > 0 and not math.isnan(r[column])]
    if len({p[0] for p in pts}) < 4:
        res.notes.append(f"fit {column}: skipped (needs four lambda values > 1)")
        return
    fit = fit_rate(pts)
    res.fits[column] = fit
    xs = [p[0] for p in pts]
    res.plots[column] = loglog_svg(
        [Series(column, xs, [p[1] for p in pts]),
         Series(f"fit q={fit.q} p={fit.p:.3f}", xs, [float(fit(x)) for x in xs],
                dashed=True, markers=False)],
        title=f"{res.section}: {label}", xlabel="lambda", ylabel=column)


_ROWS = {"uni": uni_row, "multi": multi_row, "pp": pp_row}
_FINISH = {"uni": uni_finish, "multi": multi_finish, "pp": pp_finish}


def run_sweep(cfg: SweepConfig) -> SweepResult:
    """Compute all rows (in a process pool when ``workers > 1``) in grid order."""
    fn = partial(_ROWS[cfg.section], cfg=cfg)
    grid = list(cfg.lambda_grid)
    workers = cfg.workers or min(len(grid), os.cpu_count() or 1)
    if workers > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(fn, grid))
    else:
        rows = [fn(lam) for lam in grid]
    return _FINISH[cfg.section](rows, cfg)
