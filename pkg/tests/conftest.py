import pytest

from ecse.netmodel import load_case
from ecse.powerflow import solve_power_flow


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def pf14(case14):
    return solve_power_flow(case14, tol=1e-12)


@pytest.fixture(scope="session")
def ieee_cases():
    """The three benchmark systems with their power-flow solutions."""
    out = {}
    for name in ("case14", "case57", "case118"):
        c = load_case(name)
        out[name] = (c, solve_power_flow(c, tol=1e-12))
    return out
