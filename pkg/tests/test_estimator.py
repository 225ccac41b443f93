import numpy as np
import pytest

from ecse.circuit import assemble, truth_point
from ecse.estimator import (
    EstimationResult,
    SolverError,
    SolverOptions,
    build_problem,
    constraint_residuals,
    estimate,
    extract_states,
    solve,
)
from ecse.interval import Interval
from ecse.measurement import (
    MeasurementPlan,
    MeasurementSet,
    PmuCurrent,
    PmuMeasurement,
    Sigmas,
    default_plan,
    generate_measurements,
)
from ecse.netmodel import REF, Bus, Gen, NetworkCase

from ecse.powerflow import solve_power_flow

from toys import brute_force_objective, two_bus_case, two_bus_measurements

LOUD = Sigmas(0.02, 0.02, 0.03, 0.001, 0.001)


def _single_bus():
    case = NetworkCase(100.0, (Bus(1, REF, 0, 0, 0, 0, 1.0, 0, 1),), (), (Gen(1, 0, 0, 1.0, True),), "one")
    pmu = PmuMeasurement(1, Interval(0.99, 1.01), Interval(-0.01, 0.01),
                         (PmuCurrent("injection", Interval(-0.1, 0.1), Interval(-0.1, 0.1)),), "injection")
    ms = MeasurementSet([pmu], [], MeasurementPlan((1,), (), (), 1, pmu_modes={1: "injection"}))
    return case, ms


def test_single_bus_sits_at_the_midpoint():
    case, ms = _single_bus()
    r = estimate(assemble(case, ms))
    assert r.converged
    assert r.v_rect[0] == pytest.approx([1.0, 0.0], abs=1e-8)
    assert np.max(np.abs(r.slack_currents)) < 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_two_bus_matches_exhaustive_search(seed):
    case, _, ms = two_bus_measurements(LOUD, seed=seed)
    sc = assemble(case, ms)
    r = estimate(sc)
    assert r.converged
    assert abs(r.objective_value - brute_force_objective(sc)) <= 1e-4


@pytest.mark.parametrize("mode", ["flows", "injection", "aggregated-injection"])
def test_zero_noise_recovers_truth(pf14, mode):
    plan = default_plan(pf14.case, Sigmas.zero())
    plan = MeasurementPlan.from_dict({**plan.to_dict(), "pmu_modes": {str(b): mode for b in plan.pmu_buses}})
    ms = generate_measurements(pf14, plan)
    r = estimate(assemble(pf14.case, ms))
    assert r.converged
    assert np.max(np.abs(r.v - ms.truth.v)) <= 1e-6
    assert r.objective_value <= 1e-12


def test_kkt_contract_on_converged_solves(ieee_cases):
    for name, (case, pf) in ieee_cases.items():
        plan = default_plan(case)
        for seed in range(3):
            p = build_problem(assemble(case, generate_measurements(pf, plan.with_seed(seed))))
            r = solve(p)
            assert r.converged, (name, seed)
            lin, bil, bound = constraint_residuals(p, r.x)
            assert max(lin, bil) <= 1e-8 and bound <= 1e-9, (name, seed)


def test_residuals_at_zero_and_at_truth(pf14):
    ms = generate_measurements(pf14, default_plan(pf14.case, Sigmas.zero()))
    sc = assemble(pf14.case, ms)
    p = build_problem(sc)
    lin, bil, bound = constraint_residuals(p, np.zeros(p.n))
    # the circuit has no independent sources: zero solves every row but not the bounds
    assert lin == bil == 0.0 and bound > 0.9
    assert max(constraint_residuals(p, truth_point(sc, ms.truth))) <= 1e-10
    with pytest.raises(ValueError):
        constraint_residuals(p, np.zeros(p.n + 1))


def test_problem_terms(pf14):
    plan = default_plan(pf14.case)
    p = build_problem(assemble(pf14.case, generate_measurements(pf14, plan)))
    # one slack current per PMU channel and part
    channels = sum(len(pf14.case.incident_branches(b)) for b in plan.pmu_buses)
    assert len(p.slack_idx) == 2 * channels
    assert len(p.rtu_idx) == 11
    assert np.all(p.hess_diag[p.slack_idx] == 2.0)


def test_objective_without_rtus_is_slack_sum():
    case = two_bus_case()
    pf = solve_power_flow(case, tol=1e-12)
    plan = MeasurementPlan((1, 2), (), (), 1, sigmas=Sigmas(), seed=2)
    sc = assemble(case, generate_measurements(pf, plan))
    p = build_problem(sc)
    assert len(p.rtu_idx) == 0
    x = np.random.default_rng(0).normal(size=p.n)
    assert p.objective(x) == pytest.approx(np.sum(x[p.slack_idx] ** 2), rel=1e-14)
    # one branch, two PMUs in flows mode: one channel each
    assert len(p.slack_idx) == 4


def test_determinism(pf14):
    sc = assemble(pf14.case, generate_measurements(pf14, default_plan(pf14.case, seed=5)))
    a, b = estimate(sc), estimate(sc)
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


def test_larger_conductance_tightens_pmu_match(pf14):
    ms = generate_measurements(pf14, default_plan(pf14.case, seed=3))
    dv = []
    for g in (1.0, 10.0, 100.0):
        r = estimate(assemble(pf14.case, ms, g_pmu=g))
        assert r.converged
        dv.append(np.sum((r.slack_currents / g) ** 2))
    assert dv[0] >= dv[1] >= dv[2]


def _result(v, ref=None, ids=None):
    v = np.asarray(v, dtype=complex)
    return EstimationResult(x=np.zeros(0), v_rect=np.column_stack([v.real, v.imag]), rtu_gb={},
                            slack_currents=np.zeros(0), objective_value=0.0, kkt_residual=0.0,
                            iterations=0, status="converged", bus_ids=ids or list(range(1, len(v) + 1)),
                            reference_bus=ref)


def test_extract_states():
    mag, ang = extract_states(_result([1 + 0j]))
    assert mag[0] == 1.0 and ang[0] == 0.0
    mag, ang = extract_states(_result([0.6 + 0.8j]))
    assert mag[0] == pytest.approx(1.0) and ang[0] == pytest.approx(0.9273, abs=1e-4)
    mag, ang = extract_states(_result([1j, 1 + 0j], ref=1))
    assert ang == pytest.approx([0.0, -np.pi / 2])
    _, ang = extract_states(_result([1j, 1 + 0j], ref=1), reference_bus=2)
    assert ang == pytest.approx([np.pi / 2, 0.0])


def test_inverted_bounds_raise():
    case, _, ms = two_bus_measurements(Sigmas())
    p = build_problem(assemble(case, ms))
    k = np.flatnonzero(np.isfinite(p.lo))[0]
    p.lo[k] = p.hi[k] + 1.0
    with pytest.raises(SolverError, match="lo > hi"):
        solve(p)


def test_jacobian_is_linear_in_state(pf14):
    p = build_problem(assemble(pf14.case, generate_measurements(pf14, default_plan(pf14.case))))
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=p.n), rng.normal(size=p.n)
    ja, jb, jab = p.jacobian(x), p.jacobian(y), p.jacobian(x + y)
    assert abs(jab - ja - jb + p.A).max() < 1e-12


def test_iteration_limit_reported(pf14):
    sc = assemble(pf14.case, generate_measurements(pf14, default_plan(pf14.case)))
    r = estimate(sc, SolverOptions(max_iter=1))
    assert r.status == "iteration-limit" and not r.converged


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(kkt_tol=0)
    with pytest.raises(ValueError):
        SolverOptions(init_strategy="random")


def test_midpoint_initialization_agrees(pf14):
    sc = assemble(pf14.case, generate_measurements(pf14, default_plan(pf14.case, seed=4)))
    a = estimate(sc)
    b = estimate(sc, SolverOptions(init_strategy="measurement-midpoint"))
    assert b.converged
    assert np.max(np.abs(a.v - b.v)) < 1e-6
