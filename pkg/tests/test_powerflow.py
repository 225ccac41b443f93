import numpy as np
import pytest

from ecse.netmodel import Branch, Bus, Gen, NetworkCase, PQ, PV, REF, load_case
from ecse.powerflow import (
    PowerFlowError,
    compute_branch_currents,
    compute_injections,
    solve_power_flow,
)


def _two_bus(r=0.0, x=0.1, b=0.0, pd=0.0):
    buses = (Bus(1, REF, 0, 0, 0, 0, 1.0, 0, 1), Bus(2, PQ, pd, 0, 0, 0, 1.0, 0, 1))
    return NetworkCase(100.0, buses, (Branch(1, 2, r, x, b, 1.0, 0.0, True),),
                       (Gen(1, 0, 0, 1.0, True),), "two")


def _reference_solution(name):
    from pypower import api as pp
    from pypower.ppoption import ppoption

    res, ok = pp.runpf(getattr(pp, name)(), ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-12))
    assert ok
    vm, va = res["bus"][:, 7], np.radians(res["bus"][:, 8])
    return vm * np.exp(1j * va)


@pytest.mark.parametrize("name", ["case14", "case57", "case118"])
def test_matches_independent_power_flow(name, ieee_cases):
    case, pf = ieee_cases[name]
    ref = _reference_solution(name)
    # put both on the same angle reference (the reference keeps the case's slack angle)
    s = case.index[case.slack_bus]
    ref = ref * np.exp(-1j * np.angle(ref[s]))
    assert np.max(np.abs(pf.v - ref)) < 1e-6
    assert pf.max_mismatch <= 1e-12


def test_no_load_two_bus_is_flat():
    pf = solve_power_flow(_two_bus())
    assert np.allclose(pf.v, 1.0, atol=0, rtol=0)
    assert np.all(pf.i_from == 0) and np.all(pf.i_to == 0)


def test_forced_non_convergence(case14):
    with pytest.raises(PowerFlowError, match="did not converge"):
        solve_power_flow(case14, tol=1e-12, max_iter=1)


def test_series_current_ohms_law():
    c = _two_bus()
    i_from, i_to = compute_branch_currents(c, np.array([1.0 + 0j, 0.9 + 0j]))
    assert i_from[0] == pytest.approx(-1j)
    assert i_to[0] == pytest.approx(1j)


def test_equal_voltages_only_charging():
    c = _two_bus(r=0.01, x=0.1, b=0.2)
    i_from, i_to = compute_branch_currents(c, np.array([1.0 + 0j, 1.0 + 0j]))
    assert i_from[0] == pytest.approx(0.1j) and i_to[0] == pytest.approx(0.1j)


def test_injection_power_is_load_convention(pf14):
    # S = V conj(I): P = V_R I_R + V_I I_I, Q = -V_R I_I + V_I I_R
    i_load, s = compute_injections(pf14.case, pf14.v)
    assert np.allclose(s, pf14.v * np.conj(i_load), atol=1e-14)
    c = pf14.case
    i = c.index[9]  # pure load bus
    assert s[i] == pytest.approx(c.load_injections[i], abs=1e-9)


def test_kcl_branch_currents_sum_to_injections(pf14):
    c = pf14.case
    total = np.zeros(c.n_bus, dtype=complex)
    for k, br in enumerate(c.branches):
        total[c.index[br.from_bus]] += pf14.i_from[k]
        total[c.index[br.to_bus]] += pf14.i_to[k]
    total += c.shunts * pf14.v
    assert np.max(np.abs(total + pf14.i_load)) < 1e-8


def test_scheduled_injections_reproduced(pf14):
    c = pf14.case
    spec = c.load_injections - c.gen_injections
    ref = c.index[c.slack_bus]
    pv = [c.index[g.bus] for g in c.gens if g.status]
    for i in range(c.n_bus):
        if i == ref:
            continue
        assert pf14.s_load[i].real == pytest.approx(spec[i].real, abs=1e-8)
        if i not in pv:
            assert pf14.s_load[i].imag == pytest.approx(spec[i].imag, abs=1e-8)


def test_pv_buses_hold_voltage(pf14):
    c = pf14.case
    for g in c.gens:
        assert abs(pf14.v[c.index[g.bus]]) == pytest.approx(g.vg, abs=1e-10)


@pytest.mark.parametrize("name", ["case14", "case57", "case118"])
def test_losses_equal_net_generation(name, ieee_cases):
    c, pf = ieee_cases[name]
    losses = 0j
    for k, br in enumerate(c.branches):
        vf, vt = pf.v[c.index[br.from_bus]], pf.v[c.index[br.to_bus]]
        losses += vf * np.conj(pf.i_from[k]) + vt * np.conj(pf.i_to[k])
    shunt = np.sum(np.abs(pf.v) ** 2 * np.conj(c.shunts))
    assert abs(-pf.s_load.sum() - losses - shunt) < 1e-8


def test_rotation_and_reference(pf14):
    r = pf14.referenced_to(4)
    assert np.angle(r.v[pf14.case.index[4]]) == pytest.approx(0, abs=1e-15)
    assert np.allclose(np.abs(r.v), np.abs(pf14.v))
    assert np.allclose(r.s_load, pf14.s_load)


def test_bus_types_respected():
    c = load_case("case14")
    assert {b.bus_type for b in c.buses} == {PQ, PV, REF}
