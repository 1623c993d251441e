"""Trajectory optimisation problems for two-point pivoting.

Every planner is assembled as an :class:`~cibo.nlp.NLPSpec`:

* ``baseline``       quadratic tracking MPCC with slipping contacts
* ``cibo-mass``      worst-case weight-force margin (bilevel, KKT form)
* ``cibo-com``       worst-case CoM-offset margin
* ``cibo-friction``  worst-case friction-force margins at A and B
* ``cibo-modes``     two-mode peg pivoting with optimised mode durations
* ``hierarchical``   two sequential fixed-time solves for pegs (comparison)

Each lower-level problem ``max{t >= 0 : a_j t <= b_j}`` is replaced by its
KKT system, stationarity ``-1 + sum_j a_j w_j - w_0 = 0`` with the pairs
``w_j _|_ b_j - a_j t`` and ``w_0 _|_ t``.  All rows are written through
the nominal normal forces so point and patch contact share them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import casadi as ca
import numpy as np

from . import margins as mg
from .exceptions import ConfigError, LayoutError, StaticInfeasibleError
from .kinematics import (ContactForceKnot, ContactGeometry, ControlKnot, Knot, StateKnot,
                         body_points, fk, push_point_body, static_solve)
from .nlp import NLPSpec, ProblemBuilder, SolveReport, SolverOptions, solve
from .objects import GRAVITY, ObjectSpec

log = logging.getLogger("cibo.planner")

KINDS = ("baseline", "cibo-mass", "cibo-com", "cibo-friction", "cibo-modes", "hierarchical")
KIND_ALIASES = {"mass": "cibo-mass", "com": "cibo-com", "friction": "cibo-friction",
                "modes": "cibo-modes"}
W_MAX = 1e4  # bound on lower-level multipliers


@dataclass(frozen=True)
class PlanConfig:
    spec: ObjectSpec
    kind: str = "baseline"
    contact: str = "point"
    N: int = 30
    dt: float = 1.0
    Q: tuple = (0.1, 0.0, 0.0, 0.0)
    R: tuple = (0.01, 0.01)
    alpha: float = 1.0
    beta: float = 1e-4
    x_s: Optional[tuple] = None          # (theta, p_y); default (0, face_width/4)
    x_g: tuple = (np.pi / 2, 0.0)
    f_u: float = 20.0
    theta_range: tuple = (0.0, np.pi / 2)
    theta_dot_max: float = 0.2
    p_y_dot_max: float = 0.05
    terminal: Optional[bool] = None      # default: on for rectangles, off for pegs
    warm_start: str = "interpolated"
    margin_kind: str = "com"             # margin used by cibo-modes / hierarchical
    margin_cap: float = 10.0             # N, caps the otherwise unbounded mass margin
    T_bounds: tuple = (1.0, 120.0)

    def __post_init__(self):
        kind = KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ConfigError(f"unknown planner kind {self.kind!r}")
        if self.contact not in ("point", "patch"):
            raise ConfigError(f"unknown contact model {self.contact!r}")
        if self.warm_start not in ("boundary", "interpolated"):
            raise ConfigError(f"unknown warm-start strategy {self.warm_start!r}")
        if self.margin_kind not in ("mass", "com"):
            raise ConfigError("margin_kind must be 'mass' or 'com'")
        if self.N < 2:
            raise ConfigError("horizon N must be at least 2")
        if not (self.dt > 0 and self.alpha > 0 and self.f_u > 0 and self.beta >= 0):
            raise ConfigError("dt, alpha and f_u must be positive, beta non-negative")
        if len(self.Q) != 4 or min(self.Q) < 0:
            raise ConfigError("Q must be 4 non-negative diagonal weights")
        if len(self.R) != 2 or min(self.R) <= 0:
            raise ConfigError("R must be 2 positive diagonal weights")
        if self.x_s is None:
            object.__setattr__(self, "x_s", (0.0, self.spec.face_width / 4))
        object.__setattr__(self, "x_s", tuple(float(v) for v in self.x_s))
        object.__setattr__(self, "x_g", tuple(float(v) for v in self.x_g))
        for name, x in (("x_s", self.x_s), ("x_g", self.x_g)):
            if len(x) != 2 or not self.in_box(*x):
                raise ConfigError(f"{name}={x} lies outside the state box")
        is_peg = self.spec.shape == "peg"
        if kind in ("cibo-modes", "hierarchical"):
            if not is_peg:
                raise ConfigError(f"{kind} needs a peg object")
            if self.N % 2:
                raise ConfigError("mode planners need an even horizon N")
            if not 0 < self.T_bounds[0] < self.T_bounds[1]:
                raise ConfigError("T bounds must satisfy 0 < T_min < T_max")
        elif is_peg:
            raise ConfigError("peg objects need kind cibo-modes or hierarchical")
        if self.contact == "patch" and kind in ("cibo-modes", "hierarchical"):
            raise ConfigError("patch contact is implemented for single-mode objects")
        if self.terminal is None:
            object.__setattr__(self, "terminal", not is_peg)

    def in_box(self, theta, p_y) -> bool:
        half = self.spec.face_width / 2
        lo, hi = self.theta_range
        return lo - 1e-12 <= theta <= hi + 1e-12 and -half - 1e-12 <= p_y <= half + 1e-12

    def replace(self, **kw) -> "PlanConfig":
        return replace(self, **kw)

    @property
    def uncertainty(self) -> Optional[str]:
        return {"cibo-mass": "mass", "cibo-com": "com", "cibo-friction": "friction",
                "cibo-modes": self.margin_kind, "hierarchical": self.margin_kind}.get(self.kind)


# ------------------------------------------------------------ symbolic FK

def _rot(theta, d):
    c, s = ca.cos(theta), ca.sin(theta)
    return ca.vertcat(d[0] * c + d[1] * s, -d[0] * s + d[1] * c)


def _geometry_sym(theta, p_y, spec, mode, patch_len=None):
    """Symbolic contact and manipulator points relative to the floor contact."""
    pts = body_points(spec, mode)
    B = pts["B"]
    A = _rot(theta, pts["A"] - B)
    C = _rot(theta, pts["C"] - B)
    F = pts["F"]
    if patch_len is None:
        Ps = [_rot(theta, ca.vertcat(F[0] - B[0], F[1] - p_y - B[1]))]
    else:
        fw = spec.face_width
        # P1 pinned at the face vertex p_y = -w/2, P2 patch_len further along
        Ps = [_rot(theta, ca.vertcat(F[0] - B[0], F[1] + fw / 2 - B[1])),
              _rot(theta, ca.vertcat(F[0] - B[0], F[1] + fw / 2 - patch_len - B[1]))]
    return A, C, Ps


def _wrench_sym(theta, fnP, ftP, Ps):
    c, s = ca.cos(theta), ca.sin(theta)
    fx, fy = -c * fnP - s * ftP, s * fnP - c * ftP
    k = len(Ps)
    M = sum(P[0] * fy - P[1] * fx for P in Ps)
    return k * fx, k * fy, M


# --------------------------------------------------------- problem layout

@dataclass
class Problem:
    """An assembled planner NLP with the data needed to warm-start and decode it."""
    cfg: PlanConfig
    nlp: NLPSpec
    modes: np.ndarray                    # contact mode per knot
    lps: dict = field(default_factory=dict)   # tag -> (rows a, rows b) SX functions
    lifted: list = field(default_factory=list)
    time_scaled: bool = False
    x0: tuple = (0.0, 0.0)
    theta_goal: float = np.pi / 2
    theta_box: tuple = ()

    @property
    def N(self) -> int:
        return len(self.modes) - 1


def knot_modes(cfg: PlanConfig) -> np.ndarray:
    K = cfg.N + 1
    if cfg.kind != "cibo-modes":
        return np.ones(K, int)
    k = np.arange(K)
    # scaled time step 2/N; knots with k*Delta <= 1 belong to mode 1
    return np.where(k * (2.0 / cfg.N) <= 1 + 1e-12, 1, 2)


def step_modes(modes) -> np.ndarray:
    """Mode whose duration scales the step leaving each knot.

    Step k covers scaled time [k, k+1]*Delta, so it belongs to the mode of
    knot k+1; the last knot keeps its own.
    """
    modes = np.asarray(modes, int)
    return np.append(modes[1:], modes[-1])


class _Assembler:
    def __init__(self, cfg: PlanConfig, N=None, modes=None, x0=None, terminal=None,
                 theta_box=None, theta_goal=None, name=None):
        self.cfg = cfg
        self.spec = cfg.spec
        self.N = cfg.N if N is None else N
        self.K = self.N + 1
        self.modes = knot_modes(cfg) if modes is None else np.asarray(modes, int)
        self.x0 = cfg.x_s if x0 is None else x0
        self.terminal = cfg.terminal if terminal is None else terminal
        self.theta_box = theta_box
        self.theta_goal = cfg.x_g[0] if theta_goal is None else theta_goal
        self.b = ProblemBuilder(name or cfg.kind)
        self.lps = {}

    # ---- base pivoting MPCC
    def base(self, scaled=False):
        cfg, spec, b, K = self.cfg, self.spec, self.b, self.K
        half = spec.face_width / 2
        lo, hi = self.theta_range()
        f_u = cfg.f_u
        self.scaled = scaled
        rmax_th = cfg.theta_dot_max * (cfg.T_bounds[1] if scaled else 1.0)
        rmax_p = cfg.p_y_dot_max * (cfg.T_bounds[1] if scaled else 1.0)
        v = {}
        v["theta"] = b.var("theta", (K,), lo, hi)
        v["py"] = b.var("py", (K,), -half, half)
        v["thd"] = b.var("thd", (K,), 0.0, rmax_th)
        v["pyd"] = b.var("pyd", (K,), -rmax_p, rmax_p)
        v["pyd_p"] = b.var("pyd_p", (K,), 0.0, rmax_p)
        v["pyd_m"] = b.var("pyd_m", (K,), 0.0, rmax_p)
        v["fnP"] = b.var("fnP", (K,), 0.0, f_u)
        v["ftP"] = b.var("ftP", (K,), -spec.mu_P * f_u, spec.mu_P * f_u)
        v["fnA"] = b.var("fnA", (K,), 0.0, f_u)
        v["ftA"] = b.var("ftA", (K,), -spec.mu_A * f_u, spec.mu_A * f_u)
        v["fnB"] = b.var("fnB", (K,), 0.0, f_u)
        v["ftB"] = b.var("ftB", (K,), -spec.mu_B * f_u, spec.mu_B * f_u)
        big = 10 * rmax_th * max(spec.l, 0.1)
        for key in ("pA_p", "pA_m", "pB_p", "pB_m"):
            v[key] = b.var(key, (K,), 0.0, big)
        if cfg.contact == "patch":
            v["patch"] = b.var("patch_len", (K,), 0.0, spec.face_width)
        if scaled:
            v["T"] = b.var("T", (2,), *cfg.T_bounds)
        self.v = v
        mgw = spec.mass * GRAVITY
        self.geo = []
        for k in range(K):
            th, py = v["theta"][k], v["py"][k]
            pl = v["patch"][k] if cfg.contact == "patch" else None
            A, C, Ps = _geometry_sym(th, py, spec, int(self.modes[k]), pl)
            Fx, Fy, M = _wrench_sym(th, v["fnP"][k], v["ftP"][k], Ps)
            if pl is not None:
                b.eq(pl - (py + spec.face_width / 2))
            fnA, ftA, fnB, ftB = v["fnA"][k], v["ftA"][k], v["fnB"][k], v["ftB"][k]
            b.eq(ca.vertcat(fnA + ftB + Fx, ftA + fnB + mgw + Fy,
                            A[0] * ftA - A[1] * fnA + C[0] * mgw + M))
            b.eq(ca.vertcat(ftA - spec.mu_A * fnA, ftB + spec.mu_B * fnB))
            # object contact points slide along the wall (A) and floor (B)
            b.eq(v["pA_p"][k] - v["pA_m"][k] + v["thd"][k] * A[0])
            b.eq(v["pB_p"][k] - v["pB_m"][k] + v["thd"][k] * A[1])
            b.eq(v["pyd_p"][k] - v["pyd_m"][k] - v["pyd"][k])
            self.geo.append({"A": A, "C": C, "Fx": Fx, "Fy": Fy, "M": M})
        muA, muB, muP = spec.mu_A, spec.mu_B, spec.mu_P
        b.complementarity(v["pA_p"], muA * v["fnA"] - v["ftA"], "cA_p")
        b.complementarity(v["pA_m"], muA * v["fnA"] + v["ftA"], "cA_m")
        b.complementarity(v["pB_p"], muB * v["fnB"] - v["ftB"], "cB_p")
        b.complementarity(v["pB_m"], muB * v["fnB"] + v["ftB"], "cB_m")
        b.complementarity(v["pyd_p"], muP * v["fnP"] - v["ftP"], "cP_p")
        b.complementarity(v["pyd_m"], muP * v["fnP"] + v["ftP"], "cP_m")
        step = 2.0 / self.N if scaled else cfg.dt
        for k in range(self.N):
            b.eq(v["theta"][k + 1] - v["theta"][k] - step * v["thd"][k])
            b.eq(v["py"][k + 1] - v["py"][k] - step * v["pyd"][k])
        if scaled:
            T = [v["T"][m - 1] for m in step_modes(self.modes)]
            for k in range(K):
                b.ineq(v["thd"][k] - cfg.theta_dot_max * T[k])
                b.ineq(v["pyd"][k] - cfg.p_y_dot_max * T[k])
                b.ineq(-v["pyd"][k] - cfg.p_y_dot_max * T[k])
        b.eq(v["theta"][0] - self.x0[0])
        b.eq(v["py"][0] - self.x0[1])
        if self.terminal:
            b.eq(v["theta"][self.N] - self.theta_goal)
        if scaled:
            # the last mode-1 knot is the touchdown of the second floor corner
            seam = int(np.flatnonzero(self.modes == 1)[-1])
            b.eq(v["theta"][seam] - spec.step_angle)

    def theta_range(self):
        if self.theta_box is not None:
            return self.theta_box
        cfg = self.cfg
        lo, hi = np.full(self.K, cfg.theta_range[0]), np.full(self.K, cfg.theta_range[1])
        if cfg.kind == "cibo-modes":
            gamma = self.spec.step_angle
            hi[self.modes == 1] = np.minimum(hi[self.modes == 1], gamma)
            lo[self.modes == 2] = np.maximum(lo[self.modes == 2], gamma)
        return lo, hi

    def tracking_cost(self):
        cfg, v = self.cfg, self.v
        Q, R = cfg.Q, cfg.R
        xg = (cfg.x_g[0], cfg.x_g[1], 0.0, 0.0)

        def state_cost(k):
            x = (v["theta"][k], v["py"][k], v["thd"][k], v["pyd"][k])
            return sum(Q[i] * (x[i] - xg[i]) ** 2 for i in range(4) if Q[i])

        def control_cost(k):
            return R[0] * v["fnP"][k] ** 2 + R[1] * v["ftP"][k] ** 2

        if self.scaled:
            ks = range(self.N)
            J = sum(state_cost(k) + control_cost(k) for k in ks)
            return J + v["T"][0] + v["T"][1]
        return sum(state_cost(k) for k in range(1, self.N + 1)) + \
            sum(control_cost(k) for k in range(self.N))

    # ---- lower-level LPs
    def lower_level(self, tag, a_rows, b_rows, cap=None):
        """Per-knot KKT system of ``max t s.t. a_j t <= b_j, t >= 0``."""
        b, K = self.b, self.K
        J = len(a_rows)
        t = b.var(f"{tag}_t", (K,), 0.0, np.inf if cap is None else cap)
        w = b.var(f"{tag}_w", (K, J), 0.0, W_MAX)
        w0 = b.var(f"{tag}_w0", (K,), 0.0, W_MAX)
        for k in range(K):
            b.eq(-1 + sum(a_rows[j][k] * w[k * J + j] for j in range(J)) - w0[k])
        for j in range(J):
            wj = ca.vertcat(*[w[k * J + j] for k in range(K)])
            slack = ca.vertcat(*[b_rows[j][k] - a_rows[j][k] * t[k] for k in range(K)])
            b.complementarity(wj, slack, f"{tag}_s{j}")
        b.complementarity(w0, t, f"{tag}_t0")
        self.lps[tag] = (a_rows, b_rows)
        return t

    def _D(self, k):
        A = self.geo[k]["A"]
        return self.spec.mu_A * A[0] - A[1]

    def scalar_rows(self, kind):
        """Rows ``a t <= b`` for the plus and minus directions of mass or CoM."""
        spec, v, K = self.spec, self.v, self.K
        muA, muB = spec.mu_A, spec.mu_B
        mgw = spec.mass * GRAVITY
        out = {}
        for sign, suffix in ((1.0, "plus"), (-1.0, "minus")):
            n_rows = 3 if kind == "mass" else 2
            a, bb = [[] for _ in range(n_rows)], [[] for _ in range(n_rows)]
            for k in range(K):
                D, Cx = self._D(k), self.geo[k]["C"][0]
                fnA, fnB = v["fnA"][k], v["fnB"][k]
                if kind == "mass":
                    # contact A: -C_x eps <= -D f_nA; contact B: eps <= (1 + muA muB) f_nB;
                    # the cap bounds the side that no contact limits
                    rows = [(-sign * Cx, -D * fnA), (sign * 1.0, (1 + muA * muB) * fnB),
                            (1.0, self.cfg.margin_cap)]
                else:
                    # contact A: r <= (D/mg) f_nA; B: -r <= (D/mg)(1-muB)/(1+muA) f_nB
                    # rows in millimetres keep t and its multipliers O(1)
                    rows = [(sign * 1.0, 1e3 * D / mgw * fnA),
                            (-sign * 1.0, 1e3 * D / mgw * (1 - muB) / (1 + muA) * fnB)]
                for j, (aj, bj) in enumerate(rows):
                    a[j].append(aj)
                    bb[j].append(bj)
            out[suffix] = (a, bb)
        return out

    def friction_rows(self, epsA, epsB):
        spec, v, K = self.spec, self.v, self.K
        muA, muB = spec.mu_A, spec.mu_B
        det = 1 + muA * muB
        out = {}
        for axis in ("A", "B"):
            for sign, suffix in ((1.0, "plus"), (-1.0, "minus")):
                a, bb = [[] for _ in range(4)], [[] for _ in range(4)]
                for k in range(K):
                    fnA, fnB = v["fnA"][k], v["fnB"][k]
                    if axis == "A":
                        rows = [(sign, det * fnB + muA * epsB[k]),
                                (sign * muB, det * fnA - epsB[k]),
                                (sign, muA * fnA), (-sign, muA * fnA)]
                    else:
                        rows = [(-sign * muA, det * fnB - epsA[k]),
                                (sign, det * fnA - muB * epsA[k]),
                                (sign, muB * fnB), (-sign, muB * fnB)]
                    for j, (aj, bj) in enumerate(rows):
                        a[j].append(aj)
                        bb[j].append(bj)
                out[f"fr{axis}_{suffix}"] = (a, bb)
        return out

    def cibo_scalar(self, kind):
        cfg, b = self.cfg, self.b
        rows = self.scalar_rows(kind)
        tp = self.lower_level(f"{kind}_plus", *rows["plus"])
        tm = self.lower_level(f"{kind}_minus", *rows["minus"])
        epi = b.var("epi", (2,), 0.0, np.inf)
        b.ineq(epi[0] - tp)
        b.ineq(epi[1] - tm)
        return -(epi[0] + cfg.alpha * epi[1])

    def cibo_friction(self):
        cfg, b, K, spec = self.cfg, self.b, self.K, self.spec
        v = self.v
        eA = b.var("epsA_star", (K,), -spec.mu_A * cfg.f_u, spec.mu_A * cfg.f_u)
        eB = b.var("epsB_star", (K,), -spec.mu_B * cfg.f_u, spec.mu_B * cfg.f_u)
        rows = self.friction_rows(eA, eB)
        t = {tag: self.lower_level(tag, *ab) for tag, ab in rows.items()}
        b.ineq(eA - t["frA_plus"])
        b.ineq(-eA - t["frA_minus"])
        b.ineq(eB - t["frB_plus"])
        b.ineq(-eB - t["frB_minus"])
        epi = b.var("epi", (4,), 0.0, np.inf)
        for i, tag in enumerate(("frA_plus", "frA_minus", "frB_plus", "frB_minus")):
            b.ineq(epi[i] - t[tag])
        return -(epi[0] + cfg.alpha * epi[1] + epi[2] + cfg.alpha * epi[3])

    def finish(self, margin_obj=None):
        base = self.tracking_cost()
        if margin_obj is None:
            self.b.minimize(base)
        else:
            self.b.minimize(margin_obj + self.cfg.beta * base)
        nlp = self.b.build()
        return Problem(cfg=self.cfg, nlp=nlp, modes=self.modes, lps=self.lps,
                       lifted=list(self.b.lifted), time_scaled=self.scaled,
                       x0=tuple(self.x0), theta_goal=self.theta_goal,
                       theta_box=self.theta_range())


def _assemble(cfg: PlanConfig, **kw) -> Problem:
    asm = _Assembler(cfg, **kw)
    kind = cfg.kind
    asm.base(scaled=(kind == "cibo-modes"))
    obj = None
    if kind in ("cibo-mass", "cibo-com"):
        obj = asm.cibo_scalar(cfg.uncertainty)
    elif kind == "cibo-friction":
        obj = asm.cibo_friction()
    elif kind in ("cibo-modes", "hierarchical"):
        obj = asm.cibo_scalar(cfg.margin_kind)
    return asm.finish(obj)


def build_baseline(cfg: PlanConfig) -> Problem:
    if cfg.kind != "baseline":
        raise ConfigError("build_baseline needs kind 'baseline'")
    return _assemble(cfg)


def build_cibo_scalar(cfg: PlanConfig) -> Problem:
    if cfg.kind not in ("cibo-mass", "cibo-com"):
        raise ConfigError("build_cibo_scalar needs kind cibo-mass or cibo-com")
    return _assemble(cfg)


def build_cibo_friction(cfg: PlanConfig) -> Problem:
    if cfg.kind != "cibo-friction":
        raise ConfigError("build_cibo_friction needs kind cibo-friction")
    return _assemble(cfg)


def build_cibo_modes(cfg: PlanConfig) -> Problem:
    if cfg.kind != "cibo-modes":
        raise ConfigError("build_cibo_modes needs kind cibo-modes")
    return _assemble(cfg)


def build(cfg: PlanConfig) -> Problem:
    if cfg.kind == "hierarchical":
        raise ConfigError("the hierarchical planner is two problems; use plan()")
    return _assemble(cfg)


# ------------------------------------------------------------- warm start

def _row_function(problem: Problem):
    """casadi Function mapping x to every lower-level row (a, b) by tag."""
    x = problem.nlp.symbolic.x
    outs, tags = [], []
    for tag, (a_rows, b_rows) in problem.lps.items():
        a = ca.horzcat(*[ca.vertcat(*[ca.SX(v) for v in row]) for row in a_rows])
        b = ca.horzcat(*[ca.vertcat(*row) for row in b_rows])
        outs += [a, b]
        tags.append(tag)
    return tags, ca.Function("rows", [x], outs)


def _static_knot(geom, spec, f_u, patch):
    try:
        return static_solve(geom, spec, f_u=f_u, patch=patch)
    except StaticInfeasibleError:
        return None


def make_warm_start(problem: Problem, strategy: Optional[str] = None) -> np.ndarray:
    """Initial guess: ``"boundary"`` sets boundary states only, ``"interpolated"``
    adds a linear angle profile with static forces at every knot."""
    cfg, nlp = problem.cfg, problem.nlp
    strategy = strategy or cfg.warm_start
    spec = cfg.spec
    N, K = problem.N, problem.N + 1
    lay = nlp.layout
    x = np.zeros(nlp.n_vars)

    def put(name, val):
        x[lay[name][0]] = np.ravel(val)

    th_s, py_s = problem.x0
    th_g, py_g = problem.theta_goal, cfg.x_g[1]
    if strategy == "boundary":
        th = np.zeros(K)
        py = np.zeros(K)
        th[0], py[0], th[N], py[N] = th_s, py_s, th_g, py_g
        put("theta", th)
        put("py", py)
        return x
    if problem.time_scaled:
        gamma = spec.step_angle
        seam = int(np.flatnonzero(problem.modes == 1)[-1])
        th = np.concatenate([np.linspace(th_s, gamma, seam + 1),
                             np.linspace(gamma, th_g, K - seam)[1:]])
        step = 2.0 / N
        T = np.array([max(cfg.T_bounds[0], (gamma - th_s) / (0.5 * cfg.theta_dot_max)),
                      max(cfg.T_bounds[0], (th_g - gamma) / (0.5 * cfg.theta_dot_max))])
        T = np.minimum(T, cfg.T_bounds[1])
        put("T", T)
    else:
        th = np.linspace(th_s, th_g, K)
        step = cfg.dt
    lo, hi = problem.theta_box
    th = np.clip(th, lo, hi)
    py = np.linspace(py_s, py_g, K)
    thd = np.append(np.diff(th) / step, 0.0)
    pyd = np.append(np.diff(py) / step, 0.0)
    put("theta", th)
    put("py", py)
    put("thd", thd)
    put("pyd", pyd)
    put("pyd_p", np.maximum(pyd, 0))
    put("pyd_m", np.maximum(-pyd, 0))
    patch = cfg.contact == "patch"
    fnA, fnB, fnP, ftP, pA, pB = (np.zeros(K) for _ in range(6))
    last = None
    for k in range(K):
        geom = fk(th[k], py[k], spec, int(problem.modes[k]),
                  patch_len=py[k] + spec.face_width / 2 if patch else None)
        sol = _static_knot(geom, spec, cfg.f_u, patch) or last
        if sol is not None:
            fc, u = sol
            fnA[k], fnB[k], fnP[k], ftP[k] = fc.f_nA, fc.f_nB, u.f_nP, u.f_tP
            last = sol
        pA[k], pB[k] = -thd[k] * geom.A[0], -thd[k] * geom.A[1]
    put("fnA", fnA)
    put("ftA", spec.mu_A * fnA)
    put("fnB", fnB)
    put("ftB", -spec.mu_B * fnB)
    put("fnP", fnP)
    put("ftP", ftP)
    put("pA_p", np.maximum(pA, 0))
    put("pA_m", np.maximum(-pA, 0))
    put("pB_p", np.maximum(pB, 0))
    put("pB_m", np.maximum(-pB, 0))
    if patch:
        put("patch_len", py + spec.face_width / 2)
    if problem.lps:
        tags, rows = _row_function(problem)
        vals = rows(x)
        t_val = {}
        for i, tag in enumerate(tags):
            a = np.asarray(vals[2 * i], float)
            b = np.asarray(vals[2 * i + 1], float)
            lb, ub = nlp.lb[lay[f"{tag}_t"][0]], nlp.ub[lay[f"{tag}_t"][0]]
            t = np.zeros(K)
            w = np.zeros((K, a.shape[1]))
            for k in range(K):
                pos = a[k] > 1e-12
                if not np.any(pos):
                    t[k] = min(ub[k], 1.0)
                    continue
                ratios = np.where(pos, np.maximum(b[k], 0) / np.where(pos, a[k], 1), np.inf)
                j = int(np.argmin(ratios))
                t[k] = np.clip(ratios[j], lb[k], ub[k])
                w[k, j] = 1.0 / a[k, j]
            put(f"{tag}_t", t)
            put(f"{tag}_w", w)
            t_val[tag] = t
        epi = [t_val[tag].min() for tag in t_val]
        put("epi", np.array(epi)[_epi_order(list(t_val))])
    for name, expr in problem.lifted:
        f = ca.Function("lift", [nlp.symbolic.x], [expr])
        put(name, np.asarray(f(x), float))
    return x


def _epi_order(tags):
    # epigraph variables follow the plus/minus (A then B) order of the tags
    return list(range(len(tags)))


# ------------------------------------------------------------- trajectory

@dataclass
class Trajectory:
    cfg: PlanConfig
    knots: list
    times: np.ndarray
    modes: np.ndarray
    margins: dict         # kind -> list[MarginInterval], recomputed in closed form
    solver_margins: dict  # kind -> (eps_plus, eps_minus) arrays from the NLP
    discrepancy: dict     # kind -> max |solver - closed form|
    others: dict          # friction kind -> coupling values used per knot
    report: Optional[SolveReport] = None
    durations: Optional[tuple] = None
    x: Optional[np.ndarray] = None
    patch_len: Optional[np.ndarray] = None

    @property
    def converged(self) -> bool:
        return self.report is not None and self.report.converged

    @property
    def N(self) -> int:
        return len(self.knots) - 1

    def margin_inputs(self):
        patch = self.patch_len is not None
        return [mg.KnotMarginInputs.from_knot(k.geom, k.control, self.cfg.spec, k.contact,
                                              patch=patch) for k in self.knots]

    def worst_margin(self, kind: str):
        """(eps_plus_min, eps_minus_min, (k_plus, k_minus)) over the horizon."""
        return mg.trajectory_worst_margin(self.margin_inputs(), kind, self.others.get(kind))

    def margin_arrays(self, kind):
        ivs = self.margins[kind]
        return (np.array([iv.eps_plus for iv in ivs]), np.array([iv.eps_minus for iv in ivs]))


_LP_KINDS = {"mass_plus": ("mass", 0), "mass_minus": ("mass", 1),
             "com_plus": ("com", 0), "com_minus": ("com", 1),
             "frA_plus": ("friction-A", 0), "frA_minus": ("friction-A", 1),
             "frB_plus": ("friction-B", 0), "frB_minus": ("friction-B", 1)}


def _safe_margin(inp, kind, other):
    try:
        return mg.margin(inp, kind, other)
    except (mg.DegenerateMarginError, mg.PreconditionError):
        return mg.MarginInterval(np.nan, np.nan, kind=kind)


def extract_trajectory(problem: Problem, x, report: Optional[SolveReport] = None) -> Trajectory:
    """Decode a solution vector and recompute every margin independently."""
    cfg, spec = problem.cfg, problem.cfg.spec
    v = problem.nlp.unpack(x)  # raises LayoutError on size mismatch
    K = problem.N + 1
    modes = problem.modes
    patch = cfg.contact == "patch"
    if problem.time_scaled:
        T = v["T"]
        Tk = T[step_modes(modes) - 1]
        step = 2.0 / problem.N
        dts = step * Tk[:-1]
        times = np.concatenate([[0.0], np.cumsum(dts)])
        durations = (float(T[0]), float(T[1]))
    else:
        Tk = np.ones(K)
        times = cfg.dt * np.arange(K)
        durations = None
    half = spec.face_width / 2
    knots = []
    for k in range(K):
        th = float(np.clip(v["theta"][k], 0.0, np.pi / 2))
        py = float(np.clip(v["py"][k], -half, half))
        pl = float(np.clip(v["patch_len"][k], 0, spec.face_width)) if patch else None
        geom = fk(th, py, spec, int(modes[k]), patch_len=pl)
        st = StateKnot(th, py, v["thd"][k] / Tk[k], v["pyd"][k] / Tk[k],
                       max(v["pyd_p"][k], 0) / Tk[k], max(v["pyd_m"][k], 0) / Tk[k])
        fc = ContactForceKnot(v["fnA"][k], v["ftA"][k], v["fnB"][k], v["ftB"][k],
                              max(v["pA_p"][k], 0) / Tk[k], max(v["pA_m"][k], 0) / Tk[k],
                              max(v["pB_p"][k], 0) / Tk[k], max(v["pB_m"][k], 0) / Tk[k])
        knots.append(Knot(st, ControlKnot(v["fnP"][k], v["ftP"][k]), fc, geom))
    traj = Trajectory(cfg=cfg, knots=knots, times=times, modes=np.asarray(modes),
                      margins={}, solver_margins={}, discrepancy={}, others={},
                      report=report, durations=durations, x=np.asarray(x, float),
                      patch_len=v["patch_len"] if patch else None)
    if "epsA_star" in v:
        traj.others = {"friction-A": v["epsB_star"], "friction-B": v["epsA_star"]}
    inputs = traj.margin_inputs()
    for kind in mg.KINDS:
        others = traj.others.get(kind, np.zeros(K))
        traj.margins[kind] = [_safe_margin(inp, kind, o) for inp, o in zip(inputs, others)]
    solver = {}
    for tag, (kind, side) in _LP_KINDS.items():
        if f"{tag}_t" in v:
            solver.setdefault(kind, [None, None])[side] = v[f"{tag}_t"]
    for kind, (p, m) in solver.items():
        if kind == "com":
            p, m = p * 1e-3, m * 1e-3
        traj.solver_margins[kind] = (p, m)
        cp, cm = traj.margin_arrays(kind)
        if kind == "mass":
            cp, cm = np.minimum(cp, cfg.margin_cap), np.minimum(cm, cfg.margin_cap)
        traj.discrepancy[kind] = float(np.nanmax(np.abs(np.concatenate([p - cp, m - cm]))))
    return traj


# ---------------------------------------------------------------- driving

# The lower-level audit compares in-solver margins with closed forms at 1e-6,
# and the relaxed slack on a binding row scales with delta.
CIBO_DELTA_MIN = 1e-8


def default_options(cfg: PlanConfig) -> SolverOptions:
    if cfg.kind.startswith("cibo") or cfg.kind == "hierarchical":
        return SolverOptions(delta_min=CIBO_DELTA_MIN)
    return SolverOptions()


def plan(cfg: PlanConfig, opts: Optional[SolverOptions] = None, warm_start=None) -> Trajectory:
    """Solve the planner selected by ``cfg.kind``; ``warm_start`` overrides the default guess."""
    if cfg.kind == "hierarchical":
        return plan_hierarchical(cfg, opts)
    opts = opts or default_options(cfg)
    problem = build(cfg)
    x0 = make_warm_start(problem) if warm_start is None else warm_start
    x, report = solve(problem.nlp, opts, x0)
    log.info("%s: %s in %.2fs", cfg.kind, report.status, report.wall_time)
    return extract_trajectory(problem, x, report)


def _stage(cfg, opts, *, N, mode, x0, theta_box, theta_goal):
    problem = _assemble(cfg, N=N, modes=np.full(N + 1, mode), x0=x0, terminal=True,
                        theta_box=theta_box, theta_goal=theta_goal,
                        name=f"hierarchical-{mode}")
    x, report = solve(problem.nlp, opts, make_warm_start(problem))
    return problem, extract_trajectory(problem, x, report)


def plan_hierarchical(cfg: PlanConfig, opts: Optional[SolverOptions] = None) -> Trajectory:
    """Mode 1 up to the corner switch, then mode 2 from where it ended."""
    if cfg.kind != "hierarchical":
        cfg = cfg.replace(kind="hierarchical")
    opts = opts or default_options(cfg)
    gamma = cfg.spec.step_angle
    n1 = cfg.N // 2
    n2 = cfg.N - n1
    K1 = n1 + 1
    _, t1 = _stage(cfg, opts, N=n1, mode=1, x0=cfg.x_s,
                   theta_box=(np.zeros(K1), np.full(K1, gamma)), theta_goal=gamma)
    if not t1.converged:
        return _stitch(cfg, t1, None)
    end = t1.knots[-1].state
    K2 = n2 + 1
    _, t2 = _stage(cfg, opts, N=n2, mode=2, x0=(gamma, end.p_y),
                   theta_box=(np.full(K2, gamma), np.full(K2, np.pi / 2)),
                   theta_goal=cfg.x_g[0])
    return _stitch(cfg, t1, t2)


def _stitch(cfg, t1: Trajectory, t2: Optional[Trajectory]) -> Trajectory:
    if t2 is None:
        rep = t1.report
        return replace(t1, cfg=cfg, report=rep, durations=(t1.times[-1], 0.0))
    # the seam pose is shared; stage 2's copy carries the rates that drive the next step
    knots = t1.knots[:-1] + t2.knots
    times = np.concatenate([t1.times, t1.times[-1] + t2.times[1:]])
    modes = np.concatenate([t1.modes[:-1], np.full(len(t2.knots), 2)])
    margins = {k: t1.margins[k][:-1] + t2.margins[k] for k in t1.margins}
    solver_margins = {k: tuple(np.concatenate([a[:-1], b]) for a, b in
                               zip(t1.solver_margins[k], t2.solver_margins[k]))
                      for k in t1.solver_margins}
    disc = {k: max(t1.discrepancy[k], t2.discrepancy[k]) for k in t1.discrepancy}
    r1, r2 = t1.report, t2.report
    status = r1.status if not r1.converged else r2.status
    report = SolveReport(
        status=status, objective=r1.objective + r2.objective,
        residuals={k: max(r1.residuals[k], r2.residuals[k]) for k in r1.residuals},
        stationarity=max(r1.stationarity, r2.stationarity), stages=r1.stages + r2.stages,
        iterations=r1.iterations + r2.iterations, wall_time=r1.wall_time + r2.wall_time,
        final_delta=max(r1.final_delta, r2.final_delta))
    return Trajectory(cfg=cfg, knots=knots, times=times, modes=modes, margins=margins,
                      solver_margins=solver_margins, discrepancy=disc, others={},
                      report=report, durations=(float(t1.times[-1]), float(t2.times[-1])))
