import itertools

import numpy as np
import pytest

from ecse.interval import Interval
from ecse.measurement import (
    GBInterval,
    MeasurementPlan,
    MeasurementSet,
    PlanError,
    RtuEntry,
    RtuMeasurement,
    Sigmas,
    aggregate_flow_rtu,
    default_plan,
    generate_measurements,
    rtu_admittance,
    rtu_to_gb,
    table_plan,
)

P = Interval.point


def test_rtu_to_gb_point_values():
    gb = rtu_to_gb(RtuEntry("injection", P(0.5), P(0.8), "lagging"), P(1.0))
    assert gb.g.lo == gb.g.hi == pytest.approx(0.4)
    assert gb.b.lo == gb.b.hi == pytest.approx(0.3)
    lead = rtu_to_gb(RtuEntry("injection", P(0.5), P(0.8), "leading"), P(1.0))
    assert lead.b.hi == pytest.approx(-0.3)


def test_generation_gives_negative_conductance():
    gb = rtu_to_gb(RtuEntry("injection", Interval(1.9, 2.1), Interval(-0.99, -0.95)), Interval(0.99, 1.01))
    assert gb.g.hi < 0


def test_rtu_to_gb_matches_brute_force():
    v, i, c = Interval(0.99, 1.01), Interval(0.49, 0.51), Interval(0.79, 0.81)
    gb = rtu_to_gb(RtuEntry("injection", i, c, "lagging"), v)
    grid = [np.linspace(a.lo, a.hi, 41) for a in (v, i, c)]
    vv, ii, cc = np.meshgrid(*grid, indexing="ij")
    g = ii / vv * cc
    b = ii / vv * np.sqrt(1 - cc**2)
    # the enclosure contains every sample and its ends are attained
    assert gb.g.lo == pytest.approx(g.min(), abs=1e-12) and gb.g.hi == pytest.approx(g.max(), abs=1e-12)
    assert gb.b.lo == pytest.approx(b.min(), abs=1e-12) and gb.b.hi == pytest.approx(b.max(), abs=1e-12)


def test_cos_interval_straddling_zero():
    gb = rtu_to_gb(RtuEntry("injection", P(1.0), Interval(-0.1, 0.2)), P(1.0))
    assert gb.b.hi == pytest.approx(1.0)
    assert gb.b.lo == pytest.approx(np.sqrt(1 - 0.04))


def test_rtu_entry_validation():
    with pytest.raises(ValueError):
        RtuEntry("injection", P(1.0), Interval(0.9, 1.1))
    with pytest.raises(ValueError):
        RtuEntry("injection", P(1.0), P(0.9), "sideways")
    with pytest.raises(ValueError):
        RtuMeasurement(1, Interval(-0.1, 1.0), ())


def test_aggregate_single_and_identical_entries():
    e = RtuEntry(3, P(0.5), P(0.8))
    m1 = RtuMeasurement(1, P(1.0), (e,), "flows")
    assert aggregate_flow_rtu(m1).g == rtu_to_gb(e, P(1.0)).g
    m2 = RtuMeasurement(1, P(1.0), (e, RtuEntry(4, P(0.5), P(0.8))), "flows")
    agg = aggregate_flow_rtu(m2)
    assert agg.g.lo == agg.g.hi == pytest.approx(0.8)
    with pytest.raises(ValueError, match="does not cover"):
        aggregate_flow_rtu(m2, branches=[3, 4, 5])


def test_gbinterval_arithmetic():
    a = GBInterval(Interval(1, 2), Interval(0, 1), 1.5, 0.2)
    b = GBInterval(Interval(0, 1), Interval(0, 0))
    s = a + b
    assert s.g == Interval(1, 3) and s.g_mid == 2.0 and s.b_mid == 0.2


def _plan(case, **kw):
    return default_plan(case, Sigmas.zero(), 0).__class__.from_dict(
        {**default_plan(case, Sigmas.zero(), 0).to_dict(), **kw}
    )


@pytest.mark.parametrize("pf_noise", ["angle", "cosine"])
def test_zero_noise_soundness(pf14, pf_noise):
    case = pf14.case
    plan = _plan(case, pf_noise=pf_noise)
    ms = generate_measurements(pf14, plan)
    truth = ms.truth
    for p in ms.pmus:
        assert p.v_real.width == 0 and p.v_imag.width == 0
        for c in p.currents:
            assert c.i_real.width == 0 and c.i_imag.width == 0
    for r in ms.rtus:
        i = case.index[r.bus]
        bus = case.buses[i]
        shunt = complex(bus.shunt_g, bus.shunt_b) if r.kind == "flows" else 0j
        gb = rtu_admittance(r, shunt)
        # G + jB = S/|V|^2 with S drawn by the bus (load convention)
        y = truth.s_load[i] / abs(truth.v[i]) ** 2
        assert gb.g_mid == pytest.approx(y.real, abs=1e-10)
        assert gb.b_mid == pytest.approx(y.imag, abs=1e-10)
        assert gb.g.width < 1e-12 and gb.b.width < 1e-7


def test_flow_rtu_aggregate_with_case_shunt(pf14):
    # bus 9 carries a shunt capacitor
    case = pf14.case
    base = default_plan(case, Sigmas.zero())
    inj = tuple(b for b in base.rtu_injection_buses if b != 9)
    flow = tuple(sorted(set(base.rtu_flow_buses) | {9}))
    plan = MeasurementPlan(base.pmu_buses, inj, flow, base.reference_bus, sigmas=Sigmas.zero())
    ms = generate_measurements(pf14, plan)
    b9 = case.buses[case.index[9]]
    assert b9.shunt_b > 0
    gb = rtu_admittance(ms.rtu(9), complex(b9.shunt_g, b9.shunt_b), case.incident_branches(9))
    i = case.index[9]
    y = pf14.s_load[i] / abs(pf14.v[i]) ** 2
    assert gb.g_mid == pytest.approx(y.real, abs=1e-10)
    assert gb.b_mid == pytest.approx(y.imag, abs=1e-10)


def test_sign_rule(pf14):
    case = pf14.case
    ms = generate_measurements(pf14, default_plan(case))
    for r in ms.rtus:
        i = case.index[r.bus]
        bus = case.buses[i]
        gb = rtu_admittance(r, complex(bus.shunt_g, bus.shunt_b) if r.kind == "flows" else 0j)
        p = pf14.s_load[i].real
        if p > 1e-3:
            assert gb.g.mid > 0
        elif p < -1e-3:
            assert gb.g.mid < 0


def test_pmu_voltage_noise_range(pf14):
    plan = default_plan(pf14.case)
    ref_bus = plan.reference_bus
    for seed in range(20):
        ms = generate_measurements(pf14, plan.with_seed(seed))
        p = ms.pmu(ref_bus)
        t = abs(ms.truth.v[pf14.case.index[ref_bus]])
        m = p.v_real.mid
        assert t * (1 - 2e-4) <= m <= t * (1 + 2e-4)
        assert p.v_real.hi - m == pytest.approx(3 * 2e-4 * abs(complex(m, p.v_imag.mid)), rel=1e-9)


@pytest.mark.parametrize("pf_noise", ["angle", "cosine"])
def test_truth_containment(pf14, pf_noise):
    case = pf14.case
    plan = _plan(case, pf_noise=pf_noise, sigmas=Sigmas().__dict__)
    for seed in range(25):
        ms = generate_measurements(pf14, plan.with_seed(seed))
        t = ms.truth
        for p in ms.pmus:
            v = t.v[case.index[p.bus]]
            assert v.real in p.v_real and v.imag in p.v_imag
        for r in ms.rtus:
            i = case.index[r.bus]
            assert abs(t.v[i]) in r.v_mag
            bus = case.buses[i]
            gb = rtu_admittance(r, complex(bus.shunt_g, bus.shunt_b) if r.kind == "flows" else 0j)
            y = t.s_load[i] / abs(t.v[i]) ** 2
            assert gb.g.lo - 1e-12 <= y.real <= gb.g.hi + 1e-12
            assert gb.b.lo - 1e-12 <= y.imag <= gb.b.hi + 1e-12


def test_reference_bus_has_zero_angle(pf14):
    ms = generate_measurements(pf14, default_plan(pf14.case))
    ref = pf14.case.index[ms.plan.reference_bus]
    assert np.angle(ms.truth.v[ref]) == pytest.approx(0, abs=1e-15)


def test_determinism_and_json_round_trip(pf14):
    plan = default_plan(pf14.case, seed=7)
    a = generate_measurements(pf14, plan)
    b = generate_measurements(pf14, plan)
    assert a.to_json() == b.to_json()
    c = generate_measurements(pf14, plan.with_seed(8))
    assert c.to_json() != a.to_json()
    back = MeasurementSet.from_json(a.to_json(), pf14.case)
    assert back.to_json() == a.to_json()
    assert np.allclose(back.truth.v, a.truth.v)


def test_table_plan_composition(case14):
    plan = default_plan(case14)
    assert len(plan.pmu_buses) == 3
    assert len(plan.rtu_injection_buses) == 6  # 43 % of 14
    assert len(plan.rtu_flow_buses) == 5
    assert plan.reference_bus == plan.pmu_buses[0]
    deg = case14.degree()
    assert deg[plan.pmu_buses[0]] == max(deg.values())
    assert plan.violations(case14, coverage=True) == []


@pytest.mark.parametrize("n, counts", [(57, (7, 27, 23)), (118, (10, 50, 58))])
def test_table_plan_larger_cases(ieee_cases, n, counts):
    case = ieee_cases[f"case{n}"][0]
    plan = default_plan(case)
    got = (len(plan.pmu_buses), len(plan.rtu_injection_buses), len(plan.rtu_flow_buses))
    assert got == counts
    assert plan.violations(case, coverage=True) == []


def test_plan_violations(case14):
    bad = MeasurementPlan((), (1,), (2,), 5)
    v = bad.violations()
    assert any("no PMU" in s for s in v) and any("reference bus 5" in s for s in v)
    overlap = MeasurementPlan((1,), (1,), (), 1)
    assert "device bus sets overlap" in overlap.violations()
    unknown = MeasurementPlan((1, 99), (), (), 1)
    assert any("unknown buses [99]" in s for s in unknown.violations(case14))
    assert any("unknown power-factor" in s for s in MeasurementPlan((1,), (), (), 1, pf_noise="x").violations())
    with pytest.raises(PlanError):
        table_plan(case14, 0, 40, 40)
    with pytest.raises(PlanError):
        table_plan(case14, 3, 140, 40)


def test_generate_rejects_unknown_bus(pf14):
    plan = MeasurementPlan((1, 99), (), (), 1)
    with pytest.raises(PlanError, match="unknown"):
        generate_measurements(pf14, plan)


def test_negative_sigma_rejected():
    with pytest.raises(PlanError):
        Sigmas(rtu_v=-0.1)


def test_angle_noise_bounds(pf14):
    # the measured phase shift stays within sigma of the true one
    case = pf14.case
    plan = default_plan(case)
    for seed in range(10):
        ms = generate_measurements(pf14, plan.with_seed(seed))
        for r in ms.rtus:
            if r.kind != "injection":
                continue
            i = case.index[r.bus]
            s = ms.truth.s_load[i]
            if abs(s) < 1e-9:
                continue
            phi_t = np.arccos(s.real / abs(s))
            phi_m = np.arccos(r.entries[0].cos_reading)
            assert abs(phi_m - phi_t) <= 0.006 * phi_t + 1e-12


def test_plan_dict_round_trip(case14):
    plan = table_plan(case14, 3, 43, 36, seed=4, pmu_mode="injection")
    again = MeasurementPlan.from_dict(plan.to_dict())
    assert again == plan
    assert all(again.mode(b) == "injection" for b in again.pmu_buses)


def test_interleaving_is_deterministic(case14):
    a, b = default_plan(case14), default_plan(case14)
    assert a == b
    everything = itertools.chain(a.pmu_buses, a.rtu_injection_buses, a.rtu_flow_buses)
    assert sorted(everything) == case14.bus_ids
