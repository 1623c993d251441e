"""Frictional stability margins of a single knot.

A knot with slipping contact at A and B is held fixed (geometry and
manipulator force) while one physical parameter is perturbed.  The margin
is the interval of perturbations for which both external normal forces
stay non-negative.  Three perturbation kinds are covered:

``mass``        additive change ``eps`` of the signed weight force m*g [N]
``com``         world-x offset ``r`` of the centre of mass [m]
``friction-A``  extra tangential force ``eps_A`` at A (uncertain mu_A) [N]
``friction-B``  extra tangential force ``eps_B`` at B [N]

Closed forms are evaluated in this module directly; ``margin_oracle``
recomputes the perturbed normal forces from the balance equations and
bisects, sharing no algebra with the closed forms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import DegenerateMarginError, PreconditionError
from .kinematics import ContactForceKnot, ContactGeometry, ControlKnot, control_to_world
from .objects import GRAVITY, ObjectSpec

C_TOL = 1e-9          # |C_x| below this is treated as zero
EQ_TOL = 1e-6         # nominal equilibrium tolerance
NEG_TOL = 1e-10       # nominal slack allowed to be this negative before "degenerate"
KINDS = ("mass", "com", "friction-A", "friction-B")


@dataclass(frozen=True)
class MarginInterval:
    eps_minus: float
    eps_plus: float
    unbounded_plus: bool = False
    unbounded_minus: bool = False
    kind: str = "mass"

    @property
    def width(self) -> float:
        return self.eps_plus + self.eps_minus

    def contains(self, value: float) -> bool:
        if value >= 0:
            return self.unbounded_plus or value <= self.eps_plus
        return self.unbounded_minus or -value <= self.eps_minus


@dataclass(frozen=True)
class KnotMarginInputs:
    """Everything the margin formulas need about one knot.

    ``F`` is the total manipulator force in the world frame and ``M_P``
    its moment about B, so point and patch contact share one interface.
    """
    A: np.ndarray
    C_x: float
    F: np.ndarray
    M_P: float
    mass: float
    mu_A: float
    mu_B: float
    f_nA: Optional[float] = None
    f_nB: Optional[float] = None

    @classmethod
    def from_knot(cls, geom: ContactGeometry, u: ControlKnot, spec: ObjectSpec,
                  fc: Optional[ContactForceKnot] = None, patch: bool = False):
        f = control_to_world(geom.theta, u.f_nP, u.f_tP)
        if patch:
            pts = geom.P_patch
            F = 2 * f
        else:
            pts = (geom.P,)
            F = f
        M_P = float(sum(P[0] * f[1] - P[1] * f[0] for P in pts))
        return cls(A=np.asarray(geom.A, float), C_x=float(geom.C[0]), F=np.asarray(F, float),
                   M_P=M_P, mass=spec.mass, mu_A=spec.mu_A, mu_B=spec.mu_B,
                   f_nA=None if fc is None else fc.f_nA,
                   f_nB=None if fc is None else fc.f_nB)

    @property
    def mg(self) -> float:
        return self.mass * GRAVITY

    @property
    def D(self) -> float:
        return self.mu_A * self.A[0] - self.A[1]

    def force_balance_normals(self, extra_weight=0.0, eps_A=0.0, eps_B=0.0):
        """(f_nA, f_nB) from the two force balances with slipping friction."""
        M = np.array([[1.0, -self.mu_B], [self.mu_A, 1.0]])
        rhs = np.array([-self.F[0] - eps_B, -(self.mg + extra_weight) - self.F[1] - eps_A])
        return np.linalg.solve(M, rhs)

    def nominal_normals(self):
        if self.f_nA is not None and self.f_nB is not None:
            return self.f_nA, self.f_nB
        return tuple(self.force_balance_normals())

    def equilibrium_residual(self) -> float:
        f_nA, _ = self.force_balance_normals()
        return float(self.D * f_nA + self.C_x * self.mg + self.M_P)

    def check_equilibrium(self, tol: float = EQ_TOL):
        res = self.equilibrium_residual()
        if abs(res) > tol:
            raise PreconditionError(f"knot not in static equilibrium (moment residual {res:.3e})")
        if self.D >= 0:
            raise PreconditionError("expected mu_A*A_x - A_y < 0 for wall/floor pivoting")


def _clamp_nominal(value, what):
    if value < -NEG_TOL:
        raise DegenerateMarginError(f"{what}: nominal knot already infeasible ({value:.3e})")
    return max(value, 0.0)


def _interval(plus, minus, kind):
    ub_p, ub_m = plus is None, minus is None
    return MarginInterval(
        eps_minus=np.inf if ub_m else _clamp_nominal(minus, f"{kind} minus"),
        eps_plus=np.inf if ub_p else _clamp_nominal(plus, f"{kind} plus"),
        unbounded_plus=ub_p, unbounded_minus=ub_m, kind=kind)


def mass_margin(inp: KnotMarginInputs) -> MarginInterval:
    """Weight-force perturbations keeping f_nA >= 0 and f_nB >= 0."""
    inp.check_equilibrium()
    mg, C_x = inp.mg, inp.C_x
    # contact B: f_nB >= 0  <=>  eps <= mu_A f_x - f_y - m g
    plus = inp.mu_A * inp.F[0] - inp.F[1] - mg
    minus = None
    if abs(C_x) >= C_TOL:
        # contact A: C_x (eps - eps_A) >= 0, with P_y f_x - P_x f_y = -M_P
        eps_A = (-inp.M_P - C_x * mg) / C_x
        if C_x > 0:
            minus = -eps_A
        else:
            plus = min(plus, eps_A)
    return _interval(plus, minus, "mass")


def com_margin(inp: KnotMarginInputs) -> MarginInterval:
    """World-x CoM offsets keeping both normal forces non-negative."""
    inp.check_equilibrium()
    mg, C_x, D = inp.mg, inp.C_x, inp.D
    if abs(1.0 - inp.mu_B) < 1e-12:
        raise PreconditionError("CoM margin undefined for mu_B = 1")
    # contact A: r <= (P_y f_x - P_x f_y)/mg - C_x
    plus = -inp.M_P / mg - C_x
    # contact B: r >= -C_x - (D/(1+mu_A) (-f_x - f_y - mg) - P_y f_x + P_x f_y)/mg
    bound_B = -C_x - (D / (1 + inp.mu_A) * (-inp.F[0] - inp.F[1] - mg) + inp.M_P) / mg
    if inp.mu_B < 1.0:
        minus = -bound_B
    else:  # the elimination flips sign: bound_B becomes an upper bound
        plus, minus = min(plus, bound_B), None
    return _interval(plus, minus, "com")


def friction_margin_constraints(inp: KnotMarginInputs, eps_A: float, eps_B: float) -> np.ndarray:
    """Signed residuals (<= 0 admissible): two contact rows and four cone boxes."""
    f_nA, f_nB = inp.nominal_normals()
    mg, Fx, Fy, muA, muB = inp.mg, inp.F[0], inp.F[1], inp.mu_A, inp.mu_B
    return np.array([
        -muA * Fx + eps_A + mg + Fy - muA * eps_B,
        eps_B + muB * (eps_A + mg + Fy) + Fx,
        eps_A - muA * f_nA,
        -eps_A - muA * f_nA,
        eps_B - muB * f_nB,
        -eps_B - muB * f_nB,
    ])


def ray_max(a: np.ndarray, b: np.ndarray, what="margin") -> Optional[float]:
    """max{t >= 0 : a_j t <= b_j}; ``None`` when unbounded."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if np.any(b < -NEG_TOL):
        raise DegenerateMarginError(f"{what}: t = 0 is infeasible")
    pos = a > 0
    if not np.any(pos):
        return None
    return float(max(np.min(np.maximum(b[pos], 0.0) / a[pos]), 0.0))


def friction_ray_rows(inp: KnotMarginInputs, axis: str, sign: float, other: float):
    """Rows (a, b) of ``a t <= b`` along one friction axis, linear in t."""
    g0 = friction_margin_constraints(inp, other if axis == "B" else 0.0,
                                     other if axis == "A" else 0.0)
    step = np.array([sign, 0.0]) if axis == "A" else np.array([0.0, sign])
    grad = friction_margin_constraints(inp, *step) - friction_margin_constraints(inp, 0.0, 0.0)
    return grad, -g0


def friction_margin(inp: KnotMarginInputs, eps_A_other=0.0, eps_B_other=0.0):
    """Per-axis friction margins (A and B intervals).

    The A interval is computed with ``eps_B`` held at ``eps_B_other`` and
    vice versa, the coupling used by the four lower-level problems.
    """
    inp.check_equilibrium()
    out = {}
    for axis, other in (("A", eps_B_other), ("B", eps_A_other)):
        vals = [ray_max(*friction_ray_rows(inp, axis, s, other), what=f"friction-{axis}")
                for s in (1.0, -1.0)]
        out[axis] = _interval(vals[0], vals[1], f"friction-{axis}")
    return out["A"], out["B"]


def margin(inp: KnotMarginInputs, kind: str, eps_other: float = 0.0) -> MarginInterval:
    if kind == "mass":
        return mass_margin(inp)
    if kind == "com":
        return com_margin(inp)
    if kind == "friction-A":
        return friction_margin(inp, eps_B_other=eps_other)[0]
    if kind == "friction-B":
        return friction_margin(inp, eps_A_other=eps_other)[1]
    raise ValueError(f"unknown margin kind {kind!r}")


# ---------------------------------------------------------------- oracle

def perturbed_normals(inp: KnotMarginInputs, kind: str, value: float):
    """Normal forces recomputed under a single perturbation.

    mass:     f_nA from the moment balance, f_nB from the force balances.
    com:      f_nA from the moment balance, f_nB from the moment balance
              with f_nA eliminated through the summed force balance.
    friction: both normals from the force balances.
    """
    mg, D = inp.mg, inp.D
    if kind == "mass":
        f_nA = (-inp.C_x * (mg + value) - inp.M_P) / D
        f_nB = inp.force_balance_normals(extra_weight=value)[1]
        return f_nA, f_nB
    if kind == "com":
        M = np.array([[1 + inp.mu_A, 1 - inp.mu_B], [D, 0.0]])
        rhs = np.array([-inp.F[0] - inp.F[1] - mg, -(inp.C_x + value) * mg - inp.M_P])
        z = np.linalg.solve(M, rhs)
        return z[0], z[1]
    if kind == "friction-A":
        return tuple(inp.force_balance_normals(eps_A=value))
    if kind == "friction-B":
        return tuple(inp.force_balance_normals(eps_B=value))
    raise ValueError(f"unknown margin kind {kind!r}")


def _oracle_feasible(inp, kind, value, eps_other):
    if kind in ("friction-A", "friction-B"):
        eA, eB = (value, eps_other) if kind == "friction-A" else (eps_other, value)
        f_nA, f_nB = inp.force_balance_normals(eps_A=eA, eps_B=eB)
        nA, nB = inp.nominal_normals()
        return (f_nA >= 0 and f_nB >= 0 and abs(eA) <= inp.mu_A * nA
                and abs(eB) <= inp.mu_B * nB)
    f_nA, f_nB = perturbed_normals(inp, kind, value)
    return f_nA >= 0 and f_nB >= 0


def margin_oracle(inp: KnotMarginInputs, kind: str, eps_other: float = 0.0,
                  tol: float = 1e-10, cap: float = 1e6) -> MarginInterval:
    """Margin interval by bisection on the recomputed normal forces."""
    inp.check_equilibrium()
    # round-off-level infeasibility of the nominal point is tolerated
    if not any(_oracle_feasible(inp, kind, v, eps_other) for v in (0.0, NEG_TOL, -NEG_TOL)):
        raise DegenerateMarginError(f"{kind}: nominal knot infeasible")
    ends = []
    for sign in (1.0, -1.0):
        if _oracle_feasible(inp, kind, sign * cap, eps_other):
            ends.append(None)
            continue
        lo, hi = 0.0, cap
        # geometric pre-search keeps the bracket small for ordinary values
        probe = 1e-6
        while probe < cap and _oracle_feasible(inp, kind, sign * probe, eps_other):
            lo, probe = probe, probe * 4
        hi = min(probe, cap)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if _oracle_feasible(inp, kind, sign * mid, eps_other):
                lo = mid
            else:
                hi = mid
        ends.append(0.5 * (lo + hi) if lo > 0 else lo)
    return _interval(ends[0], ends[1], kind)


# ---------------------------------------------------------- polygon tools

def friction_region_vertices(inp: KnotMarginInputs) -> np.ndarray:
    """Vertices (counter-clockwise) of the admissible (eps_A, eps_B) polygon."""
    g0 = friction_margin_constraints(inp, 0.0, 0.0)
    ga = friction_margin_constraints(inp, 1.0, 0.0) - g0
    gb = friction_margin_constraints(inp, 0.0, 1.0) - g0
    G = np.stack([ga, gb], axis=1)
    h = -g0
    pts = []
    for i in range(len(h)):
        for j in range(i + 1, len(h)):
            M = G[[i, j]]
            if abs(np.linalg.det(M)) < 1e-14:
                continue
            p = np.linalg.solve(M, h[[i, j]])
            if np.all(G @ p <= h + 1e-9):
                pts.append(p)
    if not pts:
        return np.zeros((0, 2))
    pts = np.unique(np.round(np.array(pts), 12), axis=0)
    c = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]))
    return pts[order]


def friction_admissible(inp: KnotMarginInputs, eps_A, eps_B) -> np.ndarray:
    """Vectorised membership test for the friction region."""
    eps_A, eps_B = np.broadcast_arrays(np.asarray(eps_A, float), np.asarray(eps_B, float))
    f_nA0, f_nB0 = inp.nominal_normals()
    det = 1 + inp.mu_A * inp.mu_B
    r1 = -inp.F[0] - eps_B
    r2 = -inp.mg - inp.F[1] - eps_A
    f_nA = (r1 + inp.mu_B * r2) / det
    f_nB = (r2 - inp.mu_A * r1) / det
    return ((f_nA >= 0) & (f_nB >= 0) & (np.abs(eps_A) <= inp.mu_A * f_nA0)
            & (np.abs(eps_B) <= inp.mu_B * f_nB0))


# ------------------------------------------------------- trajectory level

def trajectory_worst_margin(inputs: Sequence[KnotMarginInputs], kind: str,
                            others: Optional[Sequence[float]] = None):
    """Minimum over knots of eps_plus and eps_minus and the knots attaining them."""
    if len(inputs) == 0:
        raise ValueError("empty trajectory")
    others = [0.0] * len(inputs) if others is None else list(others)
    ivs = [margin(inp, kind, o) for inp, o in zip(inputs, others)]
    plus = np.array([iv.eps_plus for iv in ivs])
    minus = np.array([iv.eps_minus for iv in ivs])
    kp, km = int(np.argmin(plus)), int(np.argmin(minus))
    return float(plus[kp]), float(minus[km]), (kp, km)
