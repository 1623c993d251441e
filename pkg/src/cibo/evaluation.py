"""Perturbation-based robustness checks and experiment sweeps.

A plan is judged the way its margins are defined: controls and geometry
stay fixed, the perturbation is applied, the normal forces are recomputed
and the contacts must keep pushing (``f_n >= -1e-9`` N at A and B).
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import margins as mg
from .exceptions import CiboError, ConfigError, PreconditionError
from .kinematics import Knot
from .objects import GRAVITY, ObjectSpec
from .planner import PlanConfig, Trajectory, plan

log = logging.getLogger(__name__)

CONTACT_TOL = 1e-9
SCALAR_KINDS = ("mass", "com", "friction-A", "friction-B")
PERTURBATION_KINDS = SCALAR_KINDS + ("joint",)


@dataclass(frozen=True)
class PerturbationSpec:
    """What to perturb and how to sample it.

    Units follow the margin kinds: weight force in N for ``mass`` (positive
    makes the object lighter, as ``m*g + eps`` with signed g), world-x CoM
    offset in m for ``com``, friction force in N for ``friction-A/B``.
    ``joint`` draws the four components at once; ``lo``/``hi`` are then
    4-vectors in that order.
    """
    kind: str
    lo: Union[float, Sequence[float], None] = None
    hi: Union[float, Sequence[float], None] = None
    values: Optional[Sequence] = None
    count: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        if self.values is None:
            if self.lo is None or self.hi is None:
                raise ConfigError("give either lo/hi or a fixed list of values")
            lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
            want = (4,) if self.kind == "joint" else ()
            if lo.shape != want or hi.shape != want:
                raise ConfigError(f"lo/hi must have shape {want} for kind {self.kind}")
            if np.any(lo > hi):
                raise ConfigError("perturbation range needs lo <= hi")
            if self.count < 1:
                raise ConfigError("sample count must be at least 1")
        elif len(self.values) == 0:
            raise ConfigError("fixed perturbation list is empty")

    def samples(self) -> np.ndarray:
        """(n,) for scalar kinds, (n, 4) for joint; deterministic in ``seed``."""
        if self.values is not None:
            v = np.asarray(self.values, float)
            return v.reshape(-1, 4) if self.kind == "joint" else v.reshape(-1)
        rng = np.random.default_rng(self.seed)
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        shape = (self.count, 4) if self.kind == "joint" else (self.count,)
        # lo + (hi - lo) * u keeps samples nested when the range is scaled
        return lo + (hi - lo) * rng.random(shape)


@dataclass
class RobustnessReport:
    success_rate: float
    first_failure: np.ndarray   # knot index per sample, -1 when it never fails
    tightness_gap: float        # smallest failing |perturbation| minus the predicted bound
    kind: str
    n_samples: int
    predicted: Optional[mg.MarginInterval] = None
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_failed(self) -> int:
        return int(np.sum(self.first_failure >= 0))


# ------------------------------------------------------------- single knot

def _perturbed_normals(inp: mg.KnotMarginInputs, kind: str, values: np.ndarray):
    """Vectorised f_nA, f_nB under ``values`` (n,) or joint (n, 4)."""
    mgv, D, Cx, MP = inp.mg, inp.D, inp.C_x, inp.M_P
    muA, muB = inp.mu_A, inp.mu_B
    Fx, Fy = inp.F
    det = 1.0 + muA * muB
    if kind == "mass":
        e = values
        f_nA = (-Cx * (mgv + e) - MP) / D
        f_nB = (-(mgv + e) - Fy + muA * Fx) / det
    elif kind == "com":
        r = values
        f_nA = (-(Cx + r) * mgv - MP) / D
        f_nB = (-Fx - Fy - mgv - (1 + muA) * f_nA) / (1 - muB)
    elif kind in ("friction-A", "friction-B"):
        eA = values if kind == "friction-A" else 0.0
        eB = values if kind == "friction-B" else 0.0
        r1, r2 = -Fx - eB, -mgv - Fy - eA
        f_nA = (r1 + muB * r2) / det
        f_nB = (r2 - muA * r1) / det
    elif kind == "joint":
        e, r, eA, eB = (values[:, i] for i in range(4))
        w = mgv + e
        # moment balance for A, summed force balance for B
        f_nA = (-(Cx + r) * w - MP - inp.A[0] * eA) / D
        f_nB = (-Fx - Fy - w - eA - eB - (1 + muA) * f_nA) / (1 - muB)
    else:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    return np.broadcast_to(f_nA, np.shape(values)[:1]), np.broadcast_to(f_nB, np.shape(values)[:1])


def _feasible(inp: mg.KnotMarginInputs, kind: str, values: np.ndarray, tol=CONTACT_TOL):
    values = np.asarray(values, float)
    f_nA, f_nB = _perturbed_normals(inp, kind, values)
    ok = (f_nA >= -tol) & (f_nB >= -tol)
    if kind in ("friction-A", "friction-B"):
        # friction offsets must also stay inside the nominal cones
        nA, nB = inp.nominal_normals()
        bound = inp.mu_A * nA if kind == "friction-A" else inp.mu_B * nB
        ok &= np.abs(values) <= bound + tol
    return ok


def _as_perturbation(spec: ObjectSpec, perturbation):
    """Normalise to (kind, values) where values has a leading sample axis of 1."""
    if perturbation is None:
        return "mass", np.zeros(1), spec
    if isinstance(perturbation, ObjectSpec):
        return "mass", np.zeros(1), perturbation
    if not isinstance(perturbation, Mapping):
        raise TypeError("perturbation must be an ObjectSpec or a mapping kind -> value")
    unknown = set(perturbation) - set(SCALAR_KINDS)
    if unknown:
        raise ConfigError(f"unknown perturbation components {sorted(unknown)}")
    if len(perturbation) == 1:
        (kind, v), = perturbation.items()
        return kind, np.array([float(v)]), spec
    vec = np.array([[float(perturbation.get(k, 0.0)) for k in SCALAR_KINDS]])
    return "joint", vec, spec


def contact_feasibility_check(knot: Knot, spec: ObjectSpec, perturbation=None,
                              patch_len: Optional[float] = None) -> bool:
    """Whether both contacts survive ``perturbation`` with the knot's control held.

    ``perturbation`` is either a perturbed :class:`ObjectSpec` (its mass and
    friction coefficients replace the nominal ones) or a mapping from margin
    kind to perturbation value; several entries form a joint perturbation.
    """
    kind, values, used = _as_perturbation(spec, perturbation)
    patch = patch_len is not None or knot.geom.P_patch is not None
    inp = mg.KnotMarginInputs.from_knot(knot.geom, knot.control, used, patch=patch)
    return bool(_feasible(inp, kind, values)[0])


# ----------------------------------------------------------- Monte Carlo

def _predicted_interval(inputs, kind) -> Optional[mg.MarginInterval]:
    if kind == "joint":
        return None
    try:
        plus, minus, _ = mg.trajectory_worst_margin(inputs, kind)
    except CiboError:
        return None
    return mg.MarginInterval(eps_minus=minus, eps_plus=plus,
                             unbounded_plus=np.isinf(plus), unbounded_minus=np.isinf(minus),
                             kind=kind)


def _tightness_gap(values, failed, predicted) -> float:
    if predicted is None or not np.any(failed):
        return float("nan")
    gaps = []
    pos, neg = failed & (values > 0), failed & (values < 0)
    if np.any(pos) and np.isfinite(predicted.eps_plus):
        gaps.append(values[pos].min() - predicted.eps_plus)
    if np.any(neg) and np.isfinite(predicted.eps_minus):
        gaps.append(-values[neg].max() - predicted.eps_minus)
    return float(min(gaps)) if gaps else float("nan")


def monte_carlo_robustness(traj: Trajectory, pspec: PerturbationSpec) -> RobustnessReport:
    """Apply each sampled perturbation to every knot of a converged plan."""
    if not traj.converged:
        raise PreconditionError("Monte Carlo evaluation needs a converged trajectory")
    values = pspec.samples()
    inputs = traj.margin_inputs()
    n = len(values)
    first = np.full(n, -1, dtype=int)
    for k, inp in enumerate(inputs):
        bad = ~_feasible(inp, pspec.kind, values) & (first < 0)
        first[bad] = k
    failed = first >= 0
    predicted = _predicted_interval(inputs, pspec.kind)
    gap = _tightness_gap(values, failed, predicted) if pspec.kind != "joint" else float("nan")
    return RobustnessReport(success_rate=float(1.0 - failed.mean()), first_failure=first,
                            tightness_gap=gap, kind=pspec.kind, n_samples=n,
                            predicted=predicted, samples=values)


# ----------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepRow:
    p_y0: float
    converged: bool
    r_plus: float
    r_minus: float
    status: str


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))  # map keeps input order


def _sweep_one(args):
    cfg, p0, opts = args
    try:
        c = cfg.replace(x_s=(cfg.x_s[0], float(p0)))
    except ConfigError as exc:
        return SweepRow(float(p0), False, float("nan"), float("nan"), f"invalid: {exc}")
    traj = plan(c, opts)
    if not traj.converged:
        return SweepRow(float(p0), False, float("nan"), float("nan"), traj.report.status)
    plus, minus, _ = traj.worst_margin("com")
    return SweepRow(float(p0), True, plus, minus, traj.report.status)


def sweep_initial_py(cfg: PlanConfig, grid: Sequence[float], opts=None,
                     n_jobs: Optional[int] = None) -> list:
    """One CoM-robust plan per initial finger position; failures are recorded."""
    if cfg.kind != "cibo-com":
        raise ConfigError("the p_y(0) sweep runs the cibo-com planner")
    return _map(_sweep_one, [(cfg, p, opts) for p in grid], n_jobs)


@dataclass
class ModeExperiment:
    rate_mode_based: float
    rate_hierarchical: float
    samples: np.ndarray
    mode_ok: np.ndarray
    hierarchical_ok: np.ndarray

    def __iter__(self):
        return iter((self.rate_mode_based, self.rate_hierarchical))


def _mode_one(args):
    cfg, p0, kind, opts = args
    c = cfg.replace(kind=kind, x_s=(cfg.x_s[0], float(p0)))
    return bool(plan(c, opts).converged)


def mode_feasibility_experiment(cfg: PlanConfig, n_samples: int = 20, seed: int = 0,
                                opts=None, samples: Optional[Sequence[float]] = None,
                                n_jobs: Optional[int] = None) -> ModeExperiment:
    """Convergence rates of the mode-sequence planner and the two-stage baseline.

    Initial finger positions are drawn uniformly from the face unless
    ``samples`` overrides them.
    """
    if cfg.spec.shape != "peg":
        raise ConfigError("the mode experiment needs a peg object")
    if samples is None:
        half = cfg.spec.face_width / 2
        samples = np.random.default_rng(seed).uniform(-half, half, n_samples)
    samples = np.asarray(samples, float)
    jobs = [(cfg, p, kind, opts) for kind in ("cibo-modes", "hierarchical") for p in samples]
    ok = np.array(_map(_mode_one, jobs, n_jobs), bool).reshape(2, -1)
    log.info("mode experiment: %d/%d mode-based, %d/%d hierarchical",
             ok[0].sum(), len(samples), ok[1].sum(), len(samples))
    return ModeExperiment(float(ok[0].mean()), float(ok[1].mean()), samples, ok[0], ok[1])


def mass_perturbation_from_spec(nominal: ObjectSpec, perturbed: ObjectSpec) -> float:
    """Weight-force perturbation (N) equivalent to swapping the object's mass."""
    return (perturbed.mass - nominal.mass) * GRAVITY
