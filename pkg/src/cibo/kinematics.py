"""Planar pivoting kinematics and quasi-static contact mechanics.

World frame: the wall is the plane x = 0, the floor is y = 0.  Corner A of
the object slides on the wall, corner B on the floor, and every contact
quantity is expressed relative to B (the moment origin).  Body coordinates
``(s, t)`` run along the object's length from A and across its width from
the A-B edge; a body offset ``(ds, dt)`` maps to the world as
``(ds*cos + dt*sin, -ds*sin + dt*cos)``, so the object turns clockwise as
theta grows and A climbs the wall.

The manipulator pushes on the end face opposite A.  Its contact frame has
the inward face normal as first axis and ``p_y`` along the second, which
makes the body-to-world rotation ``R(pi - theta)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DomainError, ShapeError, StaticInfeasibleError
from .objects import GRAVITY, ObjectSpec

ANGLE_TOL = 1e-9


@dataclass(frozen=True)
class StateKnot:
    theta: float
    p_y: float
    theta_dot: float = 0.0
    p_y_dot: float = 0.0
    p_y_dot_plus: float = 0.0
    p_y_dot_minus: float = 0.0

    def __post_init__(self):
        if self.p_y_dot_plus < -1e-9 or self.p_y_dot_minus < -1e-9:
            raise DomainError("slip splits must be non-negative")

    @classmethod
    def from_rate(cls, theta, p_y, theta_dot=0.0, p_y_dot=0.0):
        return cls(theta, p_y, theta_dot, p_y_dot, max(p_y_dot, 0.0), max(-p_y_dot, 0.0))


@dataclass(frozen=True)
class ControlKnot:
    f_nP: float
    f_tP: float

    def world(self, theta: float) -> np.ndarray:
        return control_to_world(theta, self.f_nP, self.f_tP)


@dataclass(frozen=True)
class ContactForceKnot:
    f_nA: float
    f_tA: float
    f_nB: float
    f_tB: float
    p_A_dot_plus: float = 0.0
    p_A_dot_minus: float = 0.0
    p_B_dot_plus: float = 0.0
    p_B_dot_minus: float = 0.0

    @classmethod
    def slipping(cls, f_nA, f_nB, spec: ObjectSpec, **splits):
        """Forces obeying the slipping equalities f_tA = mu_A f_nA, f_tB = -mu_B f_nB."""
        return cls(f_nA, spec.mu_A * f_nA, f_nB, -spec.mu_B * f_nB, **splits)


@dataclass(frozen=True)
class ContactGeometry:
    theta: float
    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    C: np.ndarray
    mode: int = 1
    P_patch: Optional[tuple] = None  # (P1, P2) for the two-point patch model

    def world(self) -> dict:
        """Absolute positions under the wall/floor embedding."""
        B_w = np.array([-self.A[0], 0.0])
        out = {"A": np.array([0.0, self.A[1]]), "B": B_w,
               "P": B_w + self.P, "C": B_w + self.C}
        if self.P_patch is not None:
            out["P1"] = B_w + self.P_patch[0]
            out["P2"] = B_w + self.P_patch[1]
        return out


@dataclass(frozen=True)
class Knot:
    state: StateKnot
    control: ControlKnot
    contact: ContactForceKnot
    geom: Optional[ContactGeometry] = field(default=None)


def rotate_body(theta, ds, dt):
    """Map a body offset to the world frame (works on arrays)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([ds * c + dt * s, -ds * s + dt * c], axis=-1)


def body_points(spec: ObjectSpec, mode: int = 1) -> dict:
    """Body coordinates of every named point on the object."""
    if spec.shape == "rectangle":
        if mode != 1:
            raise ShapeError("rectangles have a single contact mode")
        l, w = spec.l, spec.w
        return {"A": np.zeros(2), "B": np.array([l, 0.0]),
                "C": np.array([l / 2, w / 2]), "F": np.array([l, w / 2])}
    if mode not in (1, 2):
        raise ShapeError(f"pegs have modes 1 and 2, got {mode}")
    l1, l2, w1, w2 = spec.l1, spec.l2, spec.w1, spec.w2
    dw = w2 - w1
    head, shaft = l1 * w2, (l2 - l1) * w1
    C = (head * np.array([l1 / 2, w2 / 2])
         + shaft * np.array([(l1 + l2) / 2, dw + w1 / 2])) / (head + shaft)
    # mode 1 rests on the step corner B2, mode 2 on the outer corner B1
    B = np.array([l1, 0.0]) if mode == 1 else np.array([l2, dw])
    return {"A": np.zeros(2), "B": B, "C": C, "F": np.array([l2, dw + w1 / 2])}


def _check_domain(theta, p_y, spec):
    if not (-ANGLE_TOL <= theta <= np.pi / 2 + ANGLE_TOL):
        raise DomainError(f"theta={theta} outside [0, pi/2]")
    half = spec.face_width / 2
    if not (-half - 1e-12 <= p_y <= half + 1e-12):
        raise DomainError(f"p_y={p_y} outside [-{half}, {half}]")


def push_point_body(spec: ObjectSpec, p_y: float) -> np.ndarray:
    F = body_points(spec)["F"]
    return F + np.array([0.0, -p_y])


def fk(theta: float, p_y: float, spec: ObjectSpec, mode: int = 1,
       patch_len: Optional[float] = None) -> ContactGeometry:
    """Contact geometry relative to the floor contact B."""
    _check_domain(theta, p_y, spec)
    pts = body_points(spec, mode)
    B = pts["B"]

    def rel(p):
        d = p - B
        return rotate_body(theta, d[0], d[1])

    P = rel(push_point_body(spec, p_y))
    patch = None
    if patch_len is not None:
        patch = tuple(rel(q) for q in patch_points_body(spec, patch_len))
    return ContactGeometry(theta=float(theta), A=rel(pts["A"]), B=np.zeros(2),
                           P=P, C=rel(pts["C"]), mode=mode, P_patch=patch)


def patch_points_body(spec: ObjectSpec, patch_len: float):
    """P1 pinned at the face vertex (p_y = -w/2), P2 ``patch_len`` along the face."""
    fw = spec.face_width
    if patch_len < 0 or patch_len > fw + 1e-12:
        raise DomainError(f"patch_len={patch_len} outside [0, {fw}]")
    return push_point_body(spec, -fw / 2), push_point_body(spec, -fw / 2 + patch_len)


def control_to_world(theta, f_nP, f_tP) -> np.ndarray:
    """World components (f_x, f_y) of the manipulator force, R(pi - theta)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([-c * f_nP - s * f_tP, s * f_nP - c * f_tP], axis=-1)


def slip_denominator(geom: ContactGeometry, spec: ObjectSpec) -> float:
    return spec.mu_A * geom.A[0] - geom.A[1]


def _manipulator_wrench(geom, u, patch):
    f = control_to_world(geom.theta, u.f_nP, u.f_tP)
    if patch:
        P1, P2 = geom.P_patch
        moment = sum(P[0] * f[1] - P[1] * f[0] for P in (P1, P2))
        return 2 * f, moment
    return f, geom.P[0] * f[1] - geom.P[1] * f[0]


def _residual(geom, fc, F, moment, mg):
    A, C = geom.A, geom.C
    return np.array([
        fc.f_nA + fc.f_tB + F[0],
        fc.f_tA + fc.f_nB + mg + F[1],
        A[0] * fc.f_tA - A[1] * fc.f_nA + C[0] * mg + moment,
    ])


def equilibrium_residual(geom: ContactGeometry, fc: ContactForceKnot,
                         u: ControlKnot, spec: ObjectSpec, mass=None) -> np.ndarray:
    """Force (x, y) and moment-about-B residuals; zero at static equilibrium."""
    mg = (spec.mass if mass is None else mass) * GRAVITY
    F, moment = _manipulator_wrench(geom, u, patch=False)
    return _residual(geom, fc, F, moment, mg)


def patch_equilibrium_residual(geom: ContactGeometry, fc: ContactForceKnot,
                               u: ControlKnot, spec: ObjectSpec, patch_len: float,
                               mass=None) -> np.ndarray:
    """Residual for the two-point patch model, each point carrying ``u``."""
    mg = (spec.mass if mass is None else mass) * GRAVITY
    P1, P2 = patch_points_body(spec, patch_len)
    pts = body_points(spec, geom.mode)
    rel = [rotate_body(geom.theta, *(q - pts["B"])) for q in (P1, P2)]
    g = ContactGeometry(geom.theta, geom.A, geom.B, geom.P, geom.C, geom.mode,
                        P_patch=tuple(rel))
    F, moment = _manipulator_wrench(g, u, patch=True)
    return _residual(g, fc, F, moment, mg)


EQ_JAC_VARS = ("mass", "f_nA", "f_tA", "f_nB", "f_tB", "f_nP", "f_tP")


def equilibrium_jacobian(geom: ContactGeometry, spec: ObjectSpec) -> np.ndarray:
    """d(residual)/d(mass, f_nA, f_tA, f_nB, f_tB, f_nP, f_tP); residual is affine."""
    c, s = np.cos(geom.theta), np.sin(geom.theta)
    A, C, P = geom.A, geom.C, geom.P
    dfx = np.array([-c, -s])
    dfy = np.array([s, -c])
    J = np.zeros((3, 7))
    J[0, [1, 4]] = 1.0
    J[0, 5:] = dfx
    J[1, 0] = GRAVITY
    J[1, [2, 3]] = 1.0
    J[1, 5:] = dfy
    J[2, 0] = C[0] * GRAVITY
    J[2, 1] = -A[1]
    J[2, 2] = A[0]
    J[2, 5:] = P[0] * dfy - P[1] * dfx
    return J


def contact_point_rates(geom: ContactGeometry, theta_dot: float):
    """Sliding rates of A along the wall (+y) and of B along the floor (+x)."""
    return -theta_dot * geom.A[0], -theta_dot * geom.A[1]


def complementarity_residuals(knot: Knot, spec: ObjectSpec):
    """(a, b) pairs that must satisfy a >= 0, b >= 0, a*b = 0."""
    fc, st, u = knot.contact, knot.state, knot.control
    return [
        (fc.p_A_dot_plus, spec.mu_A * fc.f_nA - fc.f_tA),
        (fc.p_A_dot_minus, spec.mu_A * fc.f_nA + fc.f_tA),
        (fc.p_B_dot_plus, spec.mu_B * fc.f_nB - fc.f_tB),
        (fc.p_B_dot_minus, spec.mu_B * fc.f_nB + fc.f_tB),
        (st.p_y_dot_plus, spec.mu_P * u.f_nP - u.f_tP),
        (st.p_y_dot_minus, spec.mu_P * u.f_nP + u.f_tP),
    ]


def integrate_euler(state: StateKnot, dt: float):
    if not dt > 0:
        raise DomainError("dt must be positive")
    return state.theta + dt * state.theta_dot, state.p_y + dt * state.p_y_dot


def static_force_family(geom: ContactGeometry, spec: ObjectSpec, patch=False, mass=None):
    """Equilibrium solutions z = (f_nA, f_nB, f_nP, f_tP) as ``z0 + s*d``.

    Slipping equalities at A and B are substituted, leaving three linear
    equations in four unknowns.
    """
    mg = (spec.mass if mass is None else mass) * GRAVITY
    c, s = np.cos(geom.theta), np.sin(geom.theta)
    dfx, dfy = np.array([-c, -s]), np.array([s, -c])
    if patch:
        pts = geom.P_patch
        k = 2.0
    else:
        pts = (geom.P,)
        k = 1.0
    dmom = sum(P[0] * dfy - P[1] * dfx for P in pts)
    A, C = geom.A, geom.C
    M = np.array([
        [1.0, -spec.mu_B, k * dfx[0], k * dfx[1]],
        [spec.mu_A, 1.0, k * dfy[0], k * dfy[1]],
        [spec.mu_A * A[0] - A[1], 0.0, dmom[0], dmom[1]],
    ])
    rhs = np.array([0.0, -mg, -C[0] * mg])
    z0 = np.linalg.lstsq(M, rhs, rcond=None)[0]
    d = np.linalg.svd(M)[2][-1]
    return z0, d


def static_solve(geom: ContactGeometry, spec: ObjectSpec, f_u: float = 20.0,
                 patch=False, pick="center"):
    """A static slipping force distribution inside the cones and force bounds.

    Returns ``(ContactForceKnot, ControlKnot)``.  ``pick`` chooses the point on
    the admissible segment: its ``"center"`` or the ``"min_control"`` norm.
    """
    z0, d = static_force_family(geom, spec, patch=patch)
    mu_P = spec.mu_P
    # rows G z <= h on (f_nA, f_nB, f_nP, f_tP)
    G = np.array([[-1, 0, 0, 0], [0, -1, 0, 0], [0, 0, -1, 0], [0, 0, 1, 0],
                  [0, 0, -mu_P, 1], [0, 0, -mu_P, -1], [1, 0, 0, 0], [0, 1, 0, 0]], float)
    h = np.array([0, 0, 0, f_u, 0, 0, f_u, f_u], float)
    a, b = G @ d, h - G @ z0
    lo, hi = -np.inf, np.inf
    for aj, bj in zip(a, b):
        if abs(aj) < 1e-14:
            if bj < -1e-12:
                raise StaticInfeasibleError("no admissible static forces")
        elif aj > 0:
            hi = min(hi, bj / aj)
        else:
            lo = max(lo, bj / aj)
    if lo > hi + 1e-12:
        raise StaticInfeasibleError("no admissible static forces")
    if pick == "center":
        t = 0.5 * (lo + hi)
    elif pick == "min_control":
        u0, ud = z0[2:], d[2:]
        t = float(np.clip(-(u0 @ ud) / (ud @ ud), lo, hi))
    else:
        raise ValueError(f"unknown pick {pick!r}")
    z = z0 + t * d
    return ContactForceKnot.slipping(z[0], z[1], spec), ControlKnot(z[2], z[3])
