import numpy as np
import pytest

from cibo import get_object
from cibo.evaluation import (PerturbationSpec, contact_feasibility_check,
                             mass_perturbation_from_spec, mode_feasibility_experiment,
                             monte_carlo_robustness, sweep_initial_py)
from cibo.exceptions import ConfigError, PreconditionError
from cibo.margins import KINDS, margin
from cibo.planner import PlanConfig, plan

import oracles

GEAR1 = get_object("gear1")


@pytest.fixture(scope="module")
def com_plan(planned):
    return planned("gear1", "cibo-com")


@pytest.mark.parametrize("kind", ["mass", "com"])
def test_single_knot_check_matches_margin_grid(com_plan, kind):
    """A 200-point grid across each knot's interval: inside passes, outside fails."""
    for kn, inp in list(zip(com_plan.knots, com_plan.margin_inputs()))[1:-1:5]:
        iv = margin(inp, kind)
        hi = iv.eps_plus if np.isfinite(iv.eps_plus) else 1.0
        lo = iv.eps_minus if np.isfinite(iv.eps_minus) else 1.0
        ref = oracles.Knot(kn.geom, kn.control, GEAR1, kn.contact)
        for v in np.linspace(-1.5 * lo, 1.5 * hi, 200):
            ok = contact_feasibility_check(kn, GEAR1, {kind: v})
            assert ok == ref.ok(kind, v) or abs(abs(v) - (hi if v > 0 else lo)) < 1e-9
            if iv.contains(v):
                assert ok


def test_nominal_and_heavier_object(com_plan):
    kn = com_plan.knots[10]
    assert contact_feasibility_check(kn, GEAR1)
    inp = com_plan.margin_inputs()[10]
    iv = margin(inp, "mass")
    # a mass change just past the endpoint is detected through a perturbed spec
    dm = (iv.eps_minus * 1.05) / 9.81 if np.isfinite(iv.eps_minus) else 0.0
    heavier = GEAR1.replace(mass=GEAR1.mass + dm)
    if dm:
        assert not contact_feasibility_check(kn, heavier)
    assert mass_perturbation_from_spec(GEAR1, heavier) == pytest.approx(-dm * 9.81)


def test_joint_perturbation_reduces_to_single(com_plan):
    kn = com_plan.knots[12]
    for kind in ("mass", "com"):
        for v in (-0.2, 0.05):
            scale = 1e-3 if kind == "com" else 1.0
            single = contact_feasibility_check(kn, GEAR1, {kind: v * scale})
            joint = PerturbationSpec("joint", values=[[v if kind == "mass" else 0.0,
                                                       v * scale if kind == "com" else 0.0,
                                                       0.0, 0.0]])
            from cibo.evaluation import _feasible
            inp = com_plan.margin_inputs()[12]
            assert bool(_feasible(inp, "joint", joint.samples())[0]) == single


def test_monte_carlo_inside_worst_interval_always_succeeds(com_plan):
    plus, minus, _ = com_plan.worst_margin("com")
    rep = monte_carlo_robustness(com_plan, PerturbationSpec("com", -minus, plus, count=2000))
    assert rep.success_rate == 1.0 and rep.n_failed == 0
    assert np.isnan(rep.tightness_gap)
    assert rep.predicted.eps_plus == plus


def test_near_tightness(com_plan):
    plus, minus, (kp, km) = com_plan.worst_margin("com")
    rep = monte_carlo_robustness(com_plan, PerturbationSpec(
        "com", values=[-minus * 1.001, plus * 1.001]))
    assert rep.n_failed == 2
    assert set(rep.first_failure) <= set(range(len(com_plan.knots)))
    assert 0 < rep.tightness_gap <= 1e-3 * max(plus, minus) + 1e-12


def test_success_rate_monotone_in_range(com_plan):
    plus, minus, _ = com_plan.worst_margin("com")
    rates = [monte_carlo_robustness(com_plan, PerturbationSpec(
        "com", -s * minus, s * plus, count=500, seed=4)).success_rate for s in (1, 1.5, 3, 6)]
    assert rates[0] == 1.0
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert rates[-1] < 1.0


def test_zero_width_distribution(com_plan):
    rep = monte_carlo_robustness(com_plan, PerturbationSpec("mass", 0.0, 0.0, count=50))
    assert rep.success_rate == 1.0 and np.all(rep.samples == 0.0)


def test_sampling_is_deterministic():
    a = PerturbationSpec("mass", -1, 1, count=100, seed=7).samples()
    assert np.array_equal(a, PerturbationSpec("mass", -1, 1, count=100, seed=7).samples())
    assert not np.array_equal(a, PerturbationSpec("mass", -1, 1, count=100, seed=8).samples())
    j = PerturbationSpec("joint", [-1] * 4, [1] * 4, count=10).samples()
    assert j.shape == (10, 4)


@pytest.mark.parametrize("kw", [dict(kind="torque", lo=0, hi=1), dict(kind="mass"),
                                dict(kind="mass", lo=1, hi=0), dict(kind="mass", lo=0, hi=1, count=0),
                                dict(kind="joint", lo=0, hi=1), dict(kind="mass", values=[])])
def test_perturbation_spec_validation(kw):
    with pytest.raises(ConfigError):
        PerturbationSpec(**kw)


def test_unconverged_plan_rejected():
    tr = plan(PlanConfig(get_object("peg3"), kind="cibo-modes", x_s=(0.0, 0.0)))
    with pytest.raises(PreconditionError):
        monte_carlo_robustness(tr, PerturbationSpec("mass", -0.1, 0.1))


def test_friction_monte_carlo(planned):
    tr = planned("gear1", "cibo-friction")
    from cibo.margins import trajectory_worst_margin
    for kind in ("friction-A", "friction-B"):
        # single-axis perturbations: the other friction offset stays at zero
        plus, minus, _ = trajectory_worst_margin(tr.margin_inputs(), kind)
        inside = monte_carlo_robustness(tr, PerturbationSpec(kind, -minus, plus, count=500))
        assert inside.success_rate == 1.0
        assert inside.predicted.eps_plus == plus
        outside = monte_carlo_robustness(tr, PerturbationSpec(kind, values=[1.01 * plus]))
        assert outside.success_rate == 0.0


def test_sweep_requires_com_planner():
    with pytest.raises(ConfigError):
        sweep_initial_py(PlanConfig(GEAR1), [0.0])


def test_sweep_records_invalid_points():
    rows = sweep_initial_py(PlanConfig(GEAR1, kind="cibo-com"), [GEAR1.w])
    assert len(rows) == 1 and not rows[0].converged and rows[0].status.startswith("invalid")


def test_mode_experiment_needs_peg():
    with pytest.raises(ConfigError):
        mode_feasibility_experiment(PlanConfig(GEAR1), 2)


@pytest.mark.slow
def test_mode_experiment_reproducible():
    cfg = PlanConfig(get_object("peg3"), kind="cibo-modes")
    a = mode_feasibility_experiment(cfg, 3, seed=1, n_jobs=3)
    b = mode_feasibility_experiment(cfg, 3, seed=1)
    assert np.array_equal(a.samples, b.samples)
    assert tuple(a) == tuple(b)
    assert np.array_equal(a.mode_ok, b.mode_ok)


def test_margin_kinds_exported():
    assert KINDS == ("mass", "com", "friction-A", "friction-B")
