import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cibo import get_object
from cibo.exceptions import DomainError, ShapeError, StaticInfeasibleError
from cibo.kinematics import (EQ_JAC_VARS, ContactForceKnot, ControlKnot, Knot, StateKnot,
                             body_points, complementarity_residuals, control_to_world,
                             equilibrium_jacobian, equilibrium_residual, fk, integrate_euler,
                             patch_equilibrium_residual, static_force_family, static_solve)
from cibo.objects import GRAVITY, ObjectSpec

GEAR1 = get_object("gear1")
PEG3 = get_object("peg3")

thetas = st.floats(0.0, np.pi / 2)
unit_py = st.floats(-0.5, 0.5)


def test_flat_pose_geometry():
    l, w = GEAR1.l, GEAR1.w
    g = fk(0.0, 0.0, GEAR1)
    np.testing.assert_allclose(g.A, [-l, 0.0], atol=1e-15)
    np.testing.assert_allclose(g.C, [-l / 2, w / 2], atol=1e-15)
    np.testing.assert_allclose(g.P, [0.0, w / 2], atol=1e-15)
    wd = g.world()
    np.testing.assert_allclose(wd["A"], [0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(wd["B"], [l, 0.0], atol=1e-15)


def test_upright_pose_geometry():
    l, w = GEAR1.l, GEAR1.w
    g = fk(np.pi / 2, 0.25 * w, GEAR1)
    np.testing.assert_allclose(g.A, [0.0, l], atol=1e-15)
    np.testing.assert_allclose(g.C, [w / 2, l / 2], atol=1e-15)
    # face opposite A is now the floor-side face; p_y runs along world -x
    np.testing.assert_allclose(g.P, [0.25 * w, 0.0], atol=1e-15)


@given(thetas, unit_py)
def test_a_on_wall_b_on_floor(theta, u):
    g = fk(theta, u * GEAR1.w, GEAR1)
    np.testing.assert_allclose(g.A, [-GEAR1.l * np.cos(theta), GEAR1.l * np.sin(theta)],
                               atol=1e-15)
    wd = g.world()
    assert abs(wd["A"][0]) < 1e-15 and wd["A"][1] >= -1e-15
    assert abs(wd["B"][1]) < 1e-15 and wd["B"][0] >= -1e-15


@given(thetas, unit_py)
def test_fk_is_rigid(theta, u):
    g0, g = fk(0.0, u * GEAR1.w, GEAR1), fk(theta, u * GEAR1.w, GEAR1)
    for a, b in (("A", "C"), ("A", "P"), ("C", "P")):
        d0 = np.linalg.norm(getattr(g0, a) - getattr(g0, b))
        d = np.linalg.norm(getattr(g, a) - getattr(g, b))
        assert d == pytest.approx(d0, rel=1e-12, abs=1e-15)


@given(thetas, st.floats(-30, 30), st.floats(-30, 30))
def test_control_rotation_preserves_norm(theta, fn, ft):
    f = control_to_world(theta, fn, ft)
    assert np.hypot(*f) == pytest.approx(np.hypot(fn, ft), rel=1e-12, abs=1e-12)
    # the normal push points into the object: against the outward face normal
    n_out = np.array([np.cos(theta), -np.sin(theta)])
    assert float(control_to_world(theta, 1.0, 0.0) @ n_out) == pytest.approx(-1.0)


def test_domain_errors():
    with pytest.raises(DomainError):
        fk(-0.1, 0.0, GEAR1)
    with pytest.raises(DomainError):
        fk(0.3, GEAR1.w, GEAR1)
    with pytest.raises(ShapeError):
        body_points(GEAR1, mode=2)
    with pytest.raises(ShapeError):
        body_points(PEG3, mode=3)
    with pytest.raises(DomainError):
        integrate_euler(StateKnot(0.0, 0.0, 0.1), 0.0)
    with pytest.raises(DomainError):
        StateKnot(0.0, 0.0, p_y_dot_plus=-1.0)


def test_euler_step():
    th, py = integrate_euler(StateKnot(0.1, 0.002, 0.05, -0.001), 2.0)
    assert (th, py) == pytest.approx((0.2, 0.0))


def test_peg_corner_switch_angle():
    gamma = PEG3.step_angle
    assert gamma == pytest.approx(np.arctan2(PEG3.w2 - PEG3.w1, PEG3.l2 - PEG3.l1))
    g1 = fk(gamma, 0.0, PEG3, mode=1)
    pts = body_points(PEG3, 1)
    d = body_points(PEG3, 2)["B"] - pts["B"]
    c, s = np.cos(gamma), np.sin(gamma)
    # the outer corner B1 touches the floor exactly at the switch angle
    assert -d[0] * s + d[1] * c == pytest.approx(0.0, abs=1e-15)
    g2 = fk(gamma, 0.0, PEG3, mode=2)
    np.testing.assert_allclose(g1.A - g2.A, [c * d[0] + s * d[1], 0.0], atol=1e-15)


def test_peg_centre_of_mass_inside_outline():
    C = body_points(PEG3)["C"]
    assert 0 < C[0] < PEG3.l2 and 0 < C[1] < PEG3.w2
    # the shaft pulls the CoM past the head centre
    assert C[0] > PEG3.l1 / 2


def _random_forces(rng):
    return ContactForceKnot(*rng.normal(size=4)), ControlKnot(*rng.normal(size=2))


def _flat(mass, fc, u):
    return np.array([mass, fc.f_nA, fc.f_tA, fc.f_nB, fc.f_tB, u.f_nP, u.f_tP])


@pytest.mark.parametrize("theta", [0.0, 0.4, 1.1, np.pi / 2])
def test_residual_is_affine_with_stated_jacobian(theta):
    rng = np.random.default_rng(3)
    g = fk(theta, 0.003, GEAR1)
    J = equilibrium_jacobian(g, GEAR1)
    assert J.shape == (3, len(EQ_JAC_VARS))
    # residual(z) = J z exactly: no constant term once mass is a variable
    for _ in range(5):
        fc, u = _random_forces(rng)
        m = rng.uniform(0.05, 0.5)
        r = equilibrium_residual(g, fc, u, GEAR1, mass=m)
        np.testing.assert_allclose(r, J @ _flat(m, fc, u), atol=1e-12)


def test_jacobian_against_finite_differences():
    g = fk(0.7, -0.004, GEAR1)
    J = equilibrium_jacobian(g, GEAR1)
    z0 = np.array([0.14, 1.0, 0.3, 1.2, -0.36, 2.0, 0.5])
    h = 1e-6
    fd = np.zeros_like(J)

    def res(z):
        return equilibrium_residual(g, ContactForceKnot(*z[1:5]), ControlKnot(*z[5:]),
                                    GEAR1, mass=z[0])
    for j in range(7):
        e = np.zeros(7)
        e[j] = h
        fd[:, j] = (res(z0 + e) - res(z0 - e)) / (2 * h)
    np.testing.assert_allclose(J, fd, atol=1e-8)


@given(st.floats(0.0, np.pi / 2 - 1e-3), unit_py)
@settings(max_examples=60)
def test_static_solve_yields_admissible_equilibrium(theta, u):
    g = fk(theta, u * GEAR1.w, GEAR1)
    try:
        fc, ctl = static_solve(g, GEAR1)
    except StaticInfeasibleError:
        return
    assert np.max(np.abs(equilibrium_residual(g, fc, ctl, GEAR1))) < 1e-10
    assert fc.f_nA >= -1e-12 and fc.f_nB >= -1e-12 and ctl.f_nP >= -1e-12
    assert abs(ctl.f_tP) <= GEAR1.mu_P * ctl.f_nP + 1e-12
    assert fc.f_tA == pytest.approx(GEAR1.mu_A * fc.f_nA)
    assert fc.f_tB == pytest.approx(-GEAR1.mu_B * fc.f_nB)
    knot = Knot(StateKnot(theta, u * GEAR1.w), ctl, fc, g)
    for a, b in complementarity_residuals(knot, GEAR1):
        assert a >= 0 and b >= -1e-12 and a * b == pytest.approx(0.0, abs=1e-12)


def test_upright_needs_push_below_centre():
    w = GEAR1.w
    static_solve(fk(np.pi / 2, -0.25 * w, GEAR1), GEAR1)
    with pytest.raises(StaticInfeasibleError):
        static_solve(fk(np.pi / 2, 0.25 * w, GEAR1), GEAR1)


def test_force_family_spans_solution_line():
    g = fk(0.5, 0.0, GEAR1)
    z0, d = static_force_family(g, GEAR1)
    for s in (-2.0, 0.0, 3.0):
        z = z0 + s * d
        fc = ContactForceKnot.slipping(z[0], z[1], GEAR1)
        r = equilibrium_residual(g, fc, ControlKnot(z[2], z[3]), GEAR1)
        assert np.max(np.abs(r)) < 1e-12


def test_patch_equilibrium():
    pl = 0.6 * GEAR1.w
    g = fk(0.8, 0.0, GEAR1, patch_len=pl)
    fc, u = static_solve(g, GEAR1, patch=True)
    assert np.max(np.abs(patch_equilibrium_residual(g, fc, u, GEAR1, pl))) < 1e-10
    with pytest.raises(DomainError):
        fk(0.8, 0.0, GEAR1, patch_len=2 * GEAR1.w)


def test_weight_sign():
    spec = ObjectSpec(mass=0.2, l=0.1, w=0.02)
    assert spec.weight == pytest.approx(0.2 * GRAVITY) and spec.weight < 0
