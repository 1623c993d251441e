"""Sparse NLP representation with complementarity pairs.

An :class:`NLPSpec` stores numeric evaluators (objective, gradient,
equality residuals ``c(x) = 0``, inequality residuals ``g(x) <= 0`` and
their sparse Jacobians), variable bounds and complementarity pairs
``(a_i, b_i)`` of variable indices.  Pairs are meant as ``x[a] * x[b] = 0``
with both variables bounded below by zero; :class:`ProblemBuilder` lifts
expression pairs into slack variables so this always holds.

Problems assembled with :class:`ProblemBuilder` also carry their casadi
graph, which lets the interior-point backend use exact Hessians.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import casadi as ca
import numpy as np
import scipy.sparse as sp

from ..exceptions import LayoutError


@dataclass
class Symbolic:
    x: ca.SX
    f: ca.SX
    eq: ca.SX
    ineq: ca.SX


@dataclass
class NLPSpec:
    n_vars: int
    lb: np.ndarray
    ub: np.ndarray
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    eq: Callable[[np.ndarray], np.ndarray]
    jac_eq: Callable[[np.ndarray], sp.csr_matrix]
    ineq: Callable[[np.ndarray], np.ndarray]
    jac_ineq: Callable[[np.ndarray], sp.csr_matrix]
    n_eq: int
    n_ineq: int
    comp_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))
    layout: dict = field(default_factory=dict)
    symbolic: Optional[Symbolic] = None
    name: str = "nlp"

    def __post_init__(self):
        self.lb = np.asarray(self.lb, float).reshape(-1)
        self.ub = np.asarray(self.ub, float).reshape(-1)
        self.comp_pairs = np.asarray(self.comp_pairs, int).reshape(-1, 2)
        if self.lb.shape != (self.n_vars,) or self.ub.shape != (self.n_vars,):
            raise LayoutError("bounds must have one entry per variable")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")
        if self.comp_pairs.size and (self.comp_pairs.min() < 0
                                     or self.comp_pairs.max() >= self.n_vars):
            raise LayoutError("complementarity pair references a missing variable")

    @property
    def n_comp(self) -> int:
        return len(self.comp_pairs)

    @property
    def n_constraints(self) -> int:
        return self.n_eq + self.n_ineq + self.n_comp

    def comp_products(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return x[self.comp_pairs[:, 0]] * x[self.comp_pairs[:, 1]]

    def project(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, float), self.lb, self.ub)

    def unpack(self, x) -> dict:
        x = np.asarray(x, float).reshape(-1)
        if x.shape != (self.n_vars,):
            raise LayoutError(f"expected {self.n_vars} values, got {x.size}")
        return {k: x[idx].reshape(shape) for k, (idx, shape) in self.layout.items()}

    def residuals(self, x) -> dict:
        x = np.asarray(x, float)
        e, g, p = self.eq(x), self.ineq(x), self.comp_products(x)
        bnd = np.maximum(np.maximum(self.lb - x, x - self.ub), 0.0)
        return {
            "eq": float(np.max(np.abs(e), initial=0.0)),
            "ineq": float(np.max(g, initial=0.0).clip(0.0)),
            "comp": float(np.max(p, initial=0.0).clip(0.0)),
            "bounds": float(np.max(bnd, initial=0.0)),
        }


# ------------------------------------------------------------------ builder

class ProblemBuilder:
    """Incremental construction of an :class:`NLPSpec` from casadi SX."""

    def __init__(self, name="nlp"):
        self.name = name
        self._vars, self._lb, self._ub = [], [], []
        self._layout = {}
        self._n = 0
        self._eq, self._ineq = [], []
        self._comp = []
        self._obj = ca.SX(0)
        self._sym_index = {}
        self.lifted = []  # (slack block name, defining expression)

    def var(self, name, shape=(), lb=-np.inf, ub=np.inf):
        shape = tuple(np.atleast_1d(shape).astype(int)) if shape != () else ()
        size = int(np.prod(shape)) if shape else 1
        if name in self._layout:
            raise LayoutError(f"duplicate variable block {name!r}")
        sym = ca.SX.sym(name, size)
        self._vars.append(sym)
        self._lb.append(np.broadcast_to(np.asarray(lb, float), (size,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, float), (size,)).copy())
        self._layout[name] = (np.arange(self._n, self._n + size), shape)
        for i in range(size):
            self._sym_index[sym[i].name()] = self._n + i
        self._n += size
        return sym

    def index(self, name):
        return self._layout[name][0]

    def eq(self, expr):
        self._eq.append(ca.vec(ca.SX(expr)))

    def ineq(self, expr):
        """Add ``expr <= 0``."""
        self._ineq.append(ca.vec(ca.SX(expr)))

    def complementarity(self, a, b, name=None):
        """Add ``a >= 0, b >= 0, a*b = 0``; non-variable sides become slacks."""
        a, b = ca.vec(ca.SX(a)), ca.vec(ca.SX(b))
        if a.numel() != b.numel():
            raise LayoutError("complementarity sides differ in length")
        base = name or f"comp{len(self._comp)}"
        ia = self._side_index(a, base + "_a")
        ib = self._side_index(b, base + "_b")
        self._comp.extend(zip(ia, ib))

    def _side_index(self, expr, name):
        lb = np.concatenate(self._lb)
        idx = []
        for i in range(expr.numel()):
            e = expr[i]
            j = self._sym_index.get(e.name()) if e.is_symbolic() else None
            if j is None or lb[j] < 0:
                break
            idx.append(j)
        else:
            return idx
        s = self.var(name, (expr.numel(),), lb=0.0)
        self.eq(s - expr)
        self.lifted.append((name, expr))
        return list(self._layout[name][0])

    def minimize(self, expr):
        self._obj = self._obj + expr

    def build(self) -> NLPSpec:
        x = ca.vertcat(*self._vars)
        eq = ca.vertcat(*self._eq) if self._eq else ca.SX(0, 1)
        ineq = ca.vertcat(*self._ineq) if self._ineq else ca.SX(0, 1)
        sym = Symbolic(x=x, f=self._obj, eq=eq, ineq=ineq)
        return spec_from_symbolic(sym, np.concatenate(self._lb), np.concatenate(self._ub),
                                  comp_pairs=self._comp, layout=dict(self._layout),
                                  name=self.name)


def _sparse_evaluator(fun: ca.Function, shape):
    sparsity = fun.sparsity_out(0)
    rows, cols = sparsity.get_triplet()
    rows, cols = np.asarray(rows, int), np.asarray(cols, int)

    def jac(x):
        vals = np.asarray(fun(x).nonzeros(), float)
        return sp.csr_matrix((vals, (rows, cols)), shape=shape)

    jac.structure = (rows, cols)
    return jac


def spec_from_symbolic(sym: Symbolic, lb, ub, comp_pairs=(), layout=None, name="nlp") -> NLPSpec:
    n = sym.x.numel()
    f_fun = ca.Function("f", [sym.x], [sym.f])
    g_fun = ca.Function("grad", [sym.x], [ca.gradient(sym.f, sym.x)])
    e_fun = ca.Function("eq", [sym.x], [sym.eq])
    i_fun = ca.Function("ineq", [sym.x], [sym.ineq])
    je = ca.Function("jac_eq", [sym.x], [ca.jacobian(sym.eq, sym.x)])
    ji = ca.Function("jac_ineq", [sym.x], [ca.jacobian(sym.ineq, sym.x)])
    n_eq, n_in = sym.eq.numel(), sym.ineq.numel()
    return NLPSpec(
        n_vars=n, lb=lb, ub=ub,
        objective=lambda x: float(f_fun(x)),
        gradient=lambda x: np.asarray(g_fun(x), float).reshape(-1),
        eq=lambda x: np.asarray(e_fun(x), float).reshape(-1),
        jac_eq=_sparse_evaluator(je, (n_eq, n)),
        ineq=lambda x: np.asarray(i_fun(x), float).reshape(-1),
        jac_ineq=_sparse_evaluator(ji, (n_in, n)),
        n_eq=n_eq, n_ineq=n_in, comp_pairs=np.asarray(list(comp_pairs), int).reshape(-1, 2),
        layout=layout or {}, symbolic=sym, name=name)


# --------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    ok: bool
    mismatches: list  # (block, row, col, analytic, finite_difference)
    missing_structure: list  # (block, row, col) nonzero in FD but absent from structure

    def __bool__(self):
        return self.ok


def _sample_interior(spec: NLPSpec, rng, n_points):
    lo = np.where(np.isfinite(spec.lb), spec.lb, -1.0)
    hi = np.where(np.isfinite(spec.ub), spec.ub, lo + 2.0)
    lo = np.where(np.isfinite(spec.lb), lo, hi - 2.0)
    pts = []
    for _ in range(n_points):
        t = rng.uniform(0.1, 0.9, spec.n_vars)
        pts.append(lo + t * (hi - lo))
    return pts


def validate(spec: NLPSpec, n_points=10, rtol=1e-5, seed=0, h=1e-6) -> ValidationReport:
    """Central-difference check of the gradient and both Jacobians."""
    rng = np.random.default_rng(seed)
    mism, missing = [], []
    for x in _sample_interior(spec, rng, n_points):
        blocks = [("gradient", lambda z: np.atleast_1d(spec.objective(z)),
                   sp.csr_matrix(spec.gradient(x).reshape(1, -1)), None)]
        blocks.append(("jac_eq", spec.eq, spec.jac_eq(x), getattr(spec.jac_eq, "structure", None)))
        blocks.append(("jac_ineq", spec.ineq, spec.jac_ineq(x),
                       getattr(spec.jac_ineq, "structure", None)))
        for name, fun, J, structure in blocks:
            if J.shape[0] == 0:
                continue
            Jd = J.toarray()
            fd = np.zeros_like(Jd)
            for j in range(spec.n_vars):
                step = h * max(1.0, abs(x[j]))
                xp, xm = x.copy(), x.copy()
                xp[j] += step
                xm[j] -= step
                fd[:, j] = (fun(xp) - fun(xm)) / (2 * step)
            scale = np.maximum(np.abs(fd), 1.0)
            bad = np.argwhere(np.abs(Jd - fd) > rtol * scale)
            for r, c in bad:
                mism.append((name, int(r), int(c), float(Jd[r, c]), float(fd[r, c])))
            if structure is not None:
                mask = np.zeros(Jd.shape, bool)
                mask[structure] = True
                for r, c in np.argwhere((np.abs(fd) > 1e-8) & ~mask):
                    missing.append((name, int(r), int(c)))
    return ValidationReport(ok=not mism and not missing, mismatches=mism,
                            missing_structure=sorted(set(missing)))
