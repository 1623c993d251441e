from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from cibo.exceptions import LayoutError
from cibo.nlp.problem import NLPSpec, ProblemBuilder, validate
from cibo.nlp.solver import SolverOptions, check_kkt, solve


def corner_mpcc(target=(2.0, 1.0)):
    """min |(x, y) - target|^2 with 0 <= x comp y >= 0."""
    b = ProblemBuilder("corner")
    x = b.var("x", lb=0.0)
    y = b.var("y", lb=0.0)
    b.minimize((x - target[0]) ** 2 + (y - target[1]) ** 2)
    b.complementarity(x, y)
    return b.build()


def lcp_mpcc():
    """Bilevel toy: y solves min_y (y - x)^2, y >= 0, written through its KKT pair."""
    b = ProblemBuilder("lcp")
    x = b.var("x", lb=-2.0, ub=2.0)
    y = b.var("y", lb=0.0)
    b.minimize((x + 1) ** 2 + (y - 0.5) ** 2)
    # stationarity 2(y - x) - lam = 0, lam >= 0 comp y >= 0
    b.complementarity(y, 2 * (y - x), name="kkt")
    return b.build()


def test_builder_layout_and_counts():
    spec = lcp_mpcc()
    assert spec.n_vars == 3  # x, y and the lifted side of the pair
    assert spec.n_comp == 1 and spec.n_eq == 1
    assert spec.n_constraints == spec.n_eq + spec.n_ineq + spec.n_comp
    v = spec.unpack([0.1, 0.2, 0.3])
    assert set(v) == {"x", "y", "kkt_b"}
    with pytest.raises(LayoutError):
        spec.unpack([0.0, 0.0])
    b = ProblemBuilder()
    b.var("x")
    with pytest.raises(LayoutError):
        b.var("x")


def test_bad_specs_rejected():
    f = lambda x: 0.0  # noqa: E731
    with pytest.raises(LayoutError):
        NLPSpec(2, [0.0], [1.0, 1.0], f, f, f, f, f, f, 0, 0)
    with pytest.raises(LayoutError):
        NLPSpec(1, [0.0], [1.0], f, f, f, f, f, f, 0, 0, comp_pairs=[[0, 3]])


@pytest.mark.parametrize("backend", ["ipopt", "auglag"])
def test_corner_mpcc_reaches_a_stationary_corner(backend):
    spec = corner_mpcc()
    x, rep = solve(spec, SolverOptions(backend=backend), warm_start=[1.5, 0.2])
    assert rep.converged, rep.status
    np.testing.assert_allclose(x, [2.0, 0.0], atol=1e-4)
    assert rep.residuals["comp"] <= 1e-6
    assert rep.objective == pytest.approx(1.0, abs=1e-4)


def test_bilevel_toy_matches_inner_solution():
    spec = lcp_mpcc()
    x, rep = solve(spec, SolverOptions(), warm_start=[0.0, 0.5, 0.0])
    assert rep.converged
    v = spec.unpack(x)
    # inner problem gives y = max(x, 0); upper optimum is then x = -1 with y = 0
    # or x = y = 0.25 (cost 1.5625 + 0.0625); the former is global
    assert v["y"] == pytest.approx(max(v["x"], 0.0), abs=1e-5)
    assert rep.residuals["eq"] <= 1e-6


def test_homotopy_schedule():
    assert SolverOptions(delta0=1e-1, delta_min=1e-4, shrink=0.1).schedule() == \
        pytest.approx([1e-1, 1e-2, 1e-3, 1e-4])
    s = SolverOptions(delta_min=1e-12, max_stages=4).schedule()
    assert len(s) == 4 and s[-1] == 1e-12
    for bad in (dict(delta0=1e-7), dict(shrink=1.5), dict(backend="snopt"), dict(tol_eq=0)):
        with pytest.raises(ValueError):
            SolverOptions(**bad)


def test_solve_is_deterministic():
    spec = corner_mpcc((1.0, 1.2))
    x1, r1 = solve(spec, SolverOptions(), warm_start=[0.4, 0.6])
    x2, r2 = solve(spec, SolverOptions(), warm_start=[0.4, 0.6])
    assert np.array_equal(x1, x2) and r1.iterations == r2.iterations


def test_stage_log_records():
    seen = []
    _, rep = solve(corner_mpcc(), SolverOptions(log=seen.append), warm_start=[1.5, 0.2])
    assert seen and all("stage" in r and "delta" in r for r in seen)
    assert [s["delta"] for s in rep.stages][: len(SolverOptions().schedule())] == \
        pytest.approx(SolverOptions().schedule())
    assert set(rep.summary()) >= {"status", "objective", "residuals", "iterations"}


def test_infeasible_problem_reported():
    b = ProblemBuilder()
    x = b.var("x", lb=0.0, ub=1.0)
    b.eq(x - 3.0)
    b.minimize(x ** 2)
    _, rep = solve(b.build(), SolverOptions())
    assert not rep.converged and rep.status in ("infeasible", "stalled")


def test_validate_accepts_exact_derivatives():
    assert validate(lcp_mpcc(), n_points=3)


def test_validate_catches_corrupted_jacobian():
    spec = lcp_mpcc()
    good = spec.jac_eq

    def wrong(x):
        J = good(x).toarray()
        J[0, 0] *= 1.5
        return sp.csr_matrix(J)
    wrong.structure = good.structure
    rep = validate(replace(spec, jac_eq=wrong), n_points=2)
    assert not rep and any(m[0] == "jac_eq" for m in rep.mismatches)


def test_validate_catches_missing_structure():
    spec = lcp_mpcc()
    good = spec.jac_eq

    def sparse(x):
        return good(x)
    sparse.structure = (np.array([0]), np.array([2]))
    rep = validate(replace(spec, jac_eq=sparse), n_points=1)
    assert rep.missing_structure


def test_kkt_audit_at_solution():
    spec = corner_mpcc()
    x, rep = solve(spec, SolverOptions(), warm_start=[1.5, 0.2])
    audit = check_kkt(spec, x, delta=rep.final_delta)
    assert audit["stationarity"] <= 1e-5
    # away from the solution the gradient cannot be balanced
    assert check_kkt(spec, np.array([1.0, 0.0]))["stationarity"] > 1e-2
