"""scikit-learn style wrappers around the planner and the margin formulas."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import margins as mg
from .exceptions import CiboError, ConfigError
from .kinematics import Knot
from .objects import ObjectSpec, get_object
from .planner import PlanConfig, Trajectory, plan


class PivotPlanner(BaseEstimator):
    """Plan a pivoting motion; ``fit`` ignores ``X`` and ``y``.

    Parameters mirror :class:`PlanConfig`; ``obj`` is a catalog name or an
    :class:`ObjectSpec`.  After fitting, ``trajectory_`` holds the plan,
    ``margins_`` the worst-case margins per kind and ``converged_`` the
    solver verdict.  ``predict`` interpolates ``(theta, p_y)`` at times.
    """

    def __init__(self, obj="gear1", kind="baseline", contact="point", N=30, dt=1.0,
                 alpha=1.0, beta=1e-4, x_s=None, warm_start="interpolated", margin_kind="com",
                 solver_options=None):
        self.obj = obj
        self.kind = kind
        self.contact = contact
        self.N = N
        self.dt = dt
        self.alpha = alpha
        self.beta = beta
        self.x_s = x_s
        self.warm_start = warm_start
        self.margin_kind = margin_kind
        self.solver_options = solver_options

    def _config(self) -> PlanConfig:
        spec = self.obj if isinstance(self.obj, ObjectSpec) else get_object(self.obj)
        return PlanConfig(spec=spec, kind=self.kind, contact=self.contact, N=self.N, dt=self.dt,
                          alpha=self.alpha, beta=self.beta, x_s=self.x_s,
                          warm_start=self.warm_start, margin_kind=self.margin_kind)

    def fit(self, X=None, y=None):
        traj = plan(self._config(), self.solver_options)
        self.trajectory_: Trajectory = traj
        self.converged_ = traj.converged
        self.margins_ = {}
        for kind in mg.KINDS:
            try:
                plus, minus, _ = traj.worst_margin(kind)
                self.margins_[kind] = (plus, minus)
            except CiboError:
                self.margins_[kind] = (np.nan, np.nan)
        return self

    def predict(self, X):
        check_is_fitted(self, "trajectory_")
        t = np.asarray(X, float).reshape(-1)
        traj = self.trajectory_
        th = np.array([k.state.theta for k in traj.knots])
        py = np.array([k.state.p_y for k in traj.knots])
        return np.column_stack([np.interp(t, traj.times, th), np.interp(t, traj.times, py)])

    def score(self, X=None, y=None):
        """Summed worst-case margin of the fitted plan's planned uncertainty."""
        check_is_fitted(self, "trajectory_")
        kind = self.trajectory_.cfg.uncertainty
        if kind is None:
            kind = "mass"
        if kind == "friction":
            return float(sum(sum(self.margins_[k]) for k in ("friction-A", "friction-B")))
        return float(sum(self.margins_[kind]))


class MarginTransformer(TransformerMixin, BaseEstimator):
    """Map knots (or a trajectory) to per-knot ``[eps_plus, eps_minus]`` rows."""

    def __init__(self, kind="mass", spec: Optional[ObjectSpec] = None, patch=False):
        self.kind = kind
        self.spec = spec
        self.patch = patch

    def fit(self, X=None, y=None):
        if self.kind not in mg.KINDS:
            raise ConfigError(f"unknown margin kind {self.kind!r}")
        self.n_features_out_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        if isinstance(X, Trajectory):
            spec, knots, patch = X.cfg.spec, X.knots, X.patch_len is not None
            others = X.others.get(self.kind, np.zeros(len(knots)))
        else:
            if self.spec is None:
                raise ConfigError("a spec is needed to transform bare knots")
            spec, knots, patch = self.spec, list(X), self.patch
            others = np.zeros(len(knots))
        out = np.full((len(knots), 2), np.nan)
        for i, (kn, o) in enumerate(zip(knots, others)):
            if not isinstance(kn, Knot):
                raise TypeError("expected Knot instances")
            inp = mg.KnotMarginInputs.from_knot(kn.geom, kn.control, spec, kn.contact, patch=patch)
            try:
                iv = mg.margin(inp, self.kind, o)
                out[i] = (iv.eps_plus, iv.eps_minus)
            except CiboError:
                pass
        return out

    def get_feature_names_out(self, input_features=None):
        return np.array([f"{self.kind}_plus", f"{self.kind}_minus"], dtype=object)
