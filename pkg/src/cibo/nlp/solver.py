"""Relaxation-homotopy solver for NLPs with complementarity pairs.

Each pair ``a*b = 0`` is relaxed to ``a*b <= delta``; a sequence of NLPs is
solved with delta shrinking geometrically from ``delta0`` to ``delta_min``,
each stage warm-started from the previous one.  Two inner solvers exist:

``ipopt``   interior point (IPOPT through casadi, exact sparse Hessians)
``auglag``  augmented Lagrangian with an L-BFGS-B inner solve on the bounds
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import casadi as ca
import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear, minimize

from .problem import NLPSpec

log = logging.getLogger("cibo.nlp")

STATUSES = ("converged", "infeasible", "stalled", "iteration_limit")


@dataclass(frozen=True)
class SolverOptions:
    delta0: float = 1e-1
    delta_min: float = 1e-6
    shrink: float = 0.1
    max_stages: int = 12
    inner_max_iter: int = 3000
    tol_eq: float = 1e-6
    tol_ineq: float = 1e-6
    tol_comp: float = 1e-6
    tol_kkt: float = 1e-5
    backend: str = "ipopt"
    polish: bool = True
    seed: int = 0
    log: Optional[Callable[[dict], None]] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.delta0 > self.delta_min > 0:
            raise ValueError("need delta0 > delta_min > 0")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        for key in ("tol_eq", "tol_ineq", "tol_comp", "tol_kkt"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be positive")
        if self.backend not in ("ipopt", "auglag"):
            raise ValueError(f"unknown backend {self.backend!r}")

    def schedule(self):
        deltas, d = [], self.delta0
        while d > self.delta_min * (1 + 1e-9) and len(deltas) < self.max_stages - 1:
            deltas.append(d)
            d *= self.shrink
        deltas.append(self.delta_min)
        return deltas

    def to_dict(self):
        d = asdict(self)
        d.pop("log")
        return d


@dataclass
class SolveReport:
    status: str
    objective: float
    residuals: dict
    stationarity: float
    stages: list
    iterations: int
    wall_time: float
    final_delta: float
    multipliers: dict = field(default_factory=dict, repr=False)
    log: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def summary(self) -> dict:
        return {"status": self.status, "objective": self.objective,
                "residuals": self.residuals, "stationarity": self.stationarity,
                "iterations": self.iterations, "stages": len(self.stages),
                "wall_time": self.wall_time, "final_delta": self.final_delta}


# ------------------------------------------------------------------ helpers

def _relaxed_constraints(spec: NLPSpec, x, delta):
    """All inequalities of the relaxed problem, ``<= 0`` convention."""
    return np.concatenate([spec.ineq(x), spec.comp_products(x) - delta])


def _relaxed_jacobian(spec: NLPSpec, x):
    a, b = spec.comp_pairs[:, 0], spec.comp_pairs[:, 1]
    m = len(a)
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([a, b])
    vals = np.concatenate([x[b], x[a]])
    Jc = sp.csr_matrix((vals, (rows, cols)), shape=(m, spec.n_vars))
    return sp.vstack([spec.jac_ineq(x), Jc]).tocsr()


def _dual_scale(*mults, s_max=100.0):
    """IPOPT-style scaling of the stationarity residual by multiplier size."""
    vals = np.concatenate([np.abs(np.ravel(m)) for m in mults]) if mults else np.zeros(0)
    if vals.size == 0:
        return 1.0
    return max(s_max, vals.sum() / vals.size) / s_max


def stationarity_residual(spec: NLPSpec, x, lam_eq, lam_in, lam_x, delta):
    """Scaled inf-norm of the Lagrangian gradient of the relaxed problem."""
    r = spec.gradient(x).copy()
    if spec.n_eq:
        r += spec.jac_eq(x).T @ lam_eq
    J = _relaxed_jacobian(spec, x)
    if J.shape[0]:
        r += J.T @ lam_in
    r += lam_x
    return float(np.max(np.abs(r), initial=0.0) / _dual_scale(lam_eq, lam_in, lam_x))


def check_kkt(spec: NLPSpec, x, delta: float = 0.0, active_tol: float = 1e-6) -> dict:
    """Independent stationarity audit by a bounded least-squares multiplier fit.

    Multipliers of inequalities (and of relaxed complementarity rows, with
    ``delta``) are sign-constrained and restricted to near-active rows;
    bound multipliers are sign-constrained at active bounds.
    """
    x = np.asarray(x, float)
    n = spec.n_vars
    grad = spec.gradient(x)
    g = _relaxed_constraints(spec, x, delta)
    J_in = _relaxed_jacobian(spec, x)
    act = np.flatnonzero(g >= -active_tol * np.maximum(1.0, np.abs(g)))
    fin_lb, fin_ub = np.isfinite(spec.lb), np.isfinite(spec.ub)
    lb, ub = np.where(fin_lb, spec.lb, 0.0), np.where(fin_ub, spec.ub, 0.0)
    at_lb = np.flatnonzero(fin_lb & (x - lb <= active_tol * np.maximum(1.0, np.abs(lb))))
    at_ub = np.flatnonzero(fin_ub & (ub - x <= active_tol * np.maximum(1.0, np.abs(ub))))
    cols, lo, hi = [], [], []
    if spec.n_eq:
        cols.append(spec.jac_eq(x).T)
        lo.append(np.full(spec.n_eq, -np.inf))
        hi.append(np.full(spec.n_eq, np.inf))
    if act.size:
        cols.append(J_in[act].T)
        lo.append(np.zeros(act.size))
        hi.append(np.full(act.size, np.inf))
    for idx, sign in ((at_lb, -1.0), (at_ub, 1.0)):
        if idx.size:
            cols.append(sp.csr_matrix((np.full(idx.size, sign), (idx, np.arange(idx.size))),
                                      shape=(n, idx.size)))
            lo.append(np.zeros(idx.size))
            hi.append(np.full(idx.size, np.inf))
    if not cols:
        r = grad
        mult = np.zeros(0)
    else:
        M = sp.hstack(cols).tocsr()
        res = lsq_linear(M, -grad, bounds=(np.concatenate(lo), np.concatenate(hi)),
                         lsmr_tol="auto", max_iter=5000, tol=1e-14)
        mult = res.x
        r = grad + M @ mult
    raw = float(np.max(np.abs(r), initial=0.0))
    return {"stationarity": raw / _dual_scale(mult), "stationarity_raw": raw,
            "n_active": int(act.size), "residuals": spec.residuals(x)}


def _classify(spec, opts, x):
    res = spec.residuals(x)
    ok = (res["eq"] <= opts.tol_eq and res["ineq"] <= opts.tol_ineq
          and res["comp"] <= opts.tol_comp and res["bounds"] <= opts.tol_ineq)
    return res, ok


# ------------------------------------------------------------ ipopt backend

_IPOPT_STATUS = {
    "Solve_Succeeded": "converged",
    "Solved_To_Acceptable_Level": "converged",
    "Infeasible_Problem_Detected": "infeasible",
    "Restoration_Failed": "infeasible",
    "Maximum_Iterations_Exceeded": "iteration_limit",
    "Maximum_CpuTime_Exceeded": "iteration_limit",
}


class _IpoptStages:
    def __init__(self, spec: NLPSpec, opts: SolverOptions):
        sym = spec.symbolic
        if sym is None:
            raise ValueError("ipopt backend needs a symbolically built NLPSpec")
        delta = ca.SX.sym("delta")
        a, b = spec.comp_pairs[:, 0], spec.comp_pairs[:, 1]
        comp = ca.vertcat(*[sym.x[int(i)] * sym.x[int(j)] - delta for i, j in zip(a, b)]) \
            if len(a) else ca.SX(0, 1)
        g = ca.vertcat(sym.eq, sym.ineq, comp)
        self.n_eq, self.n_in = sym.eq.numel(), sym.ineq.numel() + len(a)
        prob = {"x": sym.x, "p": delta, "f": sym.f, "g": g}
        base = {"print_time": False, "ipopt.print_level": 0, "ipopt.sb": "yes",
                "ipopt.max_iter": opts.inner_max_iter, "ipopt.tol": 1e-8,
                "ipopt.constr_viol_tol": 0.1 * min(opts.tol_eq, opts.tol_ineq),
                "ipopt.acceptable_tol": 1e-6, "ipopt.acceptable_iter": 10,
                "ipopt.acceptable_constr_viol_tol": 0.1 * min(opts.tol_eq, opts.tol_ineq),
                "ipopt.mu_strategy": "adaptive", "ipopt.bound_relax_factor": 0.0,
                "ipopt.honor_original_bounds": "yes", "record_time": True,
                # IPOPT rejects trial points that overflow; the warning is noise
                "show_eval_warnings": False}
        warm = dict(base)
        warm.update({"ipopt.warm_start_init_point": "yes", "ipopt.mu_init": 1e-4,
                     "ipopt.warm_start_bound_push": 1e-9,
                     "ipopt.warm_start_slack_bound_push": 1e-9,
                     "ipopt.warm_start_mult_bound_push": 1e-9})
        self.cold = ca.nlpsol("cold", "ipopt", prob, base)
        self.warm = ca.nlpsol("warm", "ipopt", prob, warm)
        self.lbg = np.concatenate([np.zeros(self.n_eq), np.full(self.n_in, -np.inf)])
        self.ubg = np.zeros(self.n_eq + self.n_in)

    def run(self, x0, delta, spec, lam=None, ub=None):
        solver = self.cold if lam is None else self.warm
        kw = dict(x0=x0, p=delta, lbx=spec.lb, ubx=spec.ub if ub is None else ub,
                  lbg=self.lbg, ubg=self.ubg)
        if lam is not None:
            kw.update(lam_x0=lam[0], lam_g0=lam[1])
        sol = solver(**kw)
        st = solver.stats()
        x = np.asarray(sol["x"], float).reshape(-1)
        lam_g = np.asarray(sol["lam_g"], float).reshape(-1)
        lam_x = np.asarray(sol["lam_x"], float).reshape(-1)
        it = st.get("iterations", {})
        records = [{"iter": i, "objective": float(o), "inf_pr": float(p), "inf_du": float(d)}
                   for i, (o, p, d) in enumerate(zip(it.get("obj", []), it.get("inf_pr", []),
                                                     it.get("inf_du", [])))]
        status = _IPOPT_STATUS.get(st.get("return_status"), "stalled")
        return x, (lam_x, lam_g), status, st.get("return_status"), st.get("iter_count", 0), records


# ----------------------------------------------------------- auglag backend

def _bound_multipliers(spec: NLPSpec, x, lam_eq, lam_in):
    """Bound multipliers closing the Lagrangian gradient at active bounds."""
    grad_l = spec.gradient(x) + (spec.jac_eq(x).T @ lam_eq if spec.n_eq else 0) \
        + (_relaxed_jacobian(spec, x).T @ lam_in if lam_in.size else 0)
    return -np.where((x <= spec.lb + 1e-12) | (x >= spec.ub - 1e-12), grad_l, 0.0)


def _auglag_stage(spec: NLPSpec, x0, delta, opts, lam_eq, lam_in, rho=10.0):
    """Powell-Hestenes-Rockafellar augmented Lagrangian with L-BFGS-B."""
    bounds = list(zip(np.where(np.isfinite(spec.lb), spec.lb, None),
                      np.where(np.isfinite(spec.ub), spec.ub, None)))
    x = spec.project(x0)
    total, records = 0, []
    viol_prev = np.inf
    for outer in range(50):
        def fg(z):
            c = spec.eq(z)
            g = _relaxed_constraints(spec, z, delta)
            s = np.maximum(0.0, lam_in + rho * g)
            val = spec.objective(z) + lam_eq @ c + 0.5 * rho * c @ c \
                + (s @ s - lam_in @ lam_in) / (2 * rho)
            grad = spec.gradient(z).copy()
            if c.size:
                grad += spec.jac_eq(z).T @ (lam_eq + rho * c)
            if g.size:
                grad += _relaxed_jacobian(spec, z).T @ s
            return val, grad

        res = minimize(fg, x, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opts.inner_max_iter, "ftol": 1e-15, "gtol": 1e-10})
        x = res.x
        total += res.nit
        c = spec.eq(x)
        g = _relaxed_constraints(spec, x, delta)
        lam_eq = lam_eq + rho * c
        lam_in = np.maximum(0.0, lam_in + rho * g)
        viol = max(np.max(np.abs(c), initial=0.0), np.max(g, initial=0.0))
        records.append({"iter": outer, "objective": float(spec.objective(x)),
                        "inf_pr": float(viol), "inf_du": float(np.max(np.abs(res.jac), initial=0.0))})
        if viol <= 0.1 * min(opts.tol_eq, opts.tol_ineq, opts.tol_comp) and outer > 0:
            # projected-gradient optimality of the last inner solve
            pg = x - np.clip(x - res.jac, spec.lb, spec.ub)
            if np.max(np.abs(pg), initial=0.0) <= opts.tol_kkt:
                return x, lam_eq, lam_in, "converged", total, records
        if viol > 0.25 * viol_prev:
            rho = min(rho * 10.0, 1e10)
        viol_prev = viol
    return x, lam_eq, lam_in, "stalled", total, records


def _polish(spec, opts, runner, x, lam, mults, stages, log_records, inner_total):
    """Tighten a converged relaxed point.

    First the smaller side of every pair is fixed at zero (exact branch
    identification); if that problem fails, one further relaxed stage with
    ``delta_min / 1000`` is tried.  The relaxed point is kept when neither
    attempt converges to a feasible point without losing objective.
    """
    a, b = spec.comp_pairs[:, 0], spec.comp_pairs[:, 1]
    pick = np.where(x[a] <= x[b], a, b)
    ub = spec.ub.copy()
    ub[pick] = np.maximum(spec.lb[pick], 0.0)
    f_ref = spec.objective(x)
    attempts = [(np.minimum(x, ub), ub, opts.delta_min),
                (x, None, opts.delta_min * 1e-3)]
    for x0, bound, delta in attempts:
        if runner is not None:
            xp, lamp, st, raw, iters, recs = runner.run(x0, delta, spec, lam, ub=bound)
            lam_x, lam_g = lamp
            cand = (xp, lam_g[:spec.n_eq], lam_g[spec.n_eq:], lam_x)
        else:
            target = spec if bound is None else _replace_bounds(spec, bound)
            xp, le, li, st, iters, recs = _auglag_stage(target, x0, delta, opts,
                                                        mults[0], mults[1])
            raw = st
            cand = (xp, le, li, _bound_multipliers(spec, xp, le, li))
        inner_total += iters
        for r in recs:
            r.update(stage=len(stages), delta=delta, polish=True)
            log_records.append(r)
            if opts.log is not None:
                opts.log(r)
        stages.append({"delta": delta, "status": st, "inner_status": raw,
                       "iterations": iters, "objective": spec.objective(xp), "polish": True})
        _, ok = _classify(spec, opts, xp)
        if st == "converged" and ok and spec.objective(xp) <= f_ref + 1e-4 * (1 + abs(f_ref)):
            return (*cand, inner_total)
    return (x, *mults, inner_total)


def _replace_bounds(spec, ub):
    from dataclasses import replace
    return replace(spec, ub=ub)


# --------------------------------------------------------------------- API

def solve(spec: NLPSpec, opts: Optional[SolverOptions] = None, warm_start=None):
    """Solve ``spec`` through the relaxation homotopy; returns ``(x, SolveReport)``."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    x = spec.project(np.zeros(spec.n_vars) if warm_start is None else warm_start)
    stages, log_records, inner_total = [], [], 0
    status = "stalled"
    lam = None
    lam_eq = np.zeros(spec.n_eq)
    lam_in = np.zeros(spec.n_ineq + spec.n_comp)
    lam_x = np.zeros(spec.n_vars)
    runner = _IpoptStages(spec, opts) if opts.backend == "ipopt" else None
    schedule = opts.schedule()
    stalls = 0
    for si, delta in enumerate(schedule):
        if runner is not None:
            x, lam, st, raw, iters, recs = runner.run(x, delta, spec, lam)
            lam_x, lam_g = lam
            lam_eq, lam_in = lam_g[:spec.n_eq], lam_g[spec.n_eq:]
        else:
            x, lam_eq, lam_in, st, iters, recs = _auglag_stage(spec, x, delta, opts, lam_eq, lam_in)
            raw = st
            lam_x = _bound_multipliers(spec, x, lam_eq, lam_in)
        inner_total += iters
        obj = spec.objective(x)
        for r in recs:
            r.update(stage=si, delta=delta)
            log_records.append(r)
            if opts.log is not None:
                opts.log(r)
        stages.append({"delta": delta, "status": st, "inner_status": raw,
                       "iterations": iters, "objective": obj})
        log.debug("stage %d delta=%.1e status=%s iters=%d obj=%.6g", si, delta, raw, iters, obj)
        status = st
        if st == "infeasible":
            break
        if st != "converged":
            stalls += 1
            if stalls >= 2:
                break
        else:
            stalls = 0
    final_delta = stages[-1]["delta"]
    if (opts.polish and status == "converged" and spec.n_comp
            and final_delta <= opts.delta_min * (1 + 1e-9)):
        x, lam_eq, lam_in, lam_x, inner_total = _polish(
            spec, opts, runner, x, lam, (lam_eq, lam_in, lam_x), stages, log_records, inner_total)
    res, feasible = _classify(spec, opts, x)
    stat = stationarity_residual(spec, x, lam_eq, lam_in, lam_x, final_delta)
    if status == "converged":
        if final_delta > opts.delta_min * (1 + 1e-9):
            status = "stalled"
        elif not feasible:
            status = "infeasible" if res["eq"] > 1e3 * opts.tol_eq else "stalled"
        elif stat > opts.tol_kkt:
            status = "stalled"
    report = SolveReport(status=status, objective=float(spec.objective(x)), residuals=res,
                         stationarity=stat, stages=stages, iterations=inner_total,
                         wall_time=time.perf_counter() - t0, final_delta=final_delta,
                         multipliers={"eq": lam_eq, "ineq": lam_in, "bounds": lam_x},
                         log=log_records)
    return x, report
