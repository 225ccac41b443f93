"""Measurement plans, synthetic PMU/RTU data, and RTU-to-admittance conversion.

Sign conventions
----------------
* PMU voltage phasors are bus voltages, re-referenced so the plan's
  reference bus has angle zero.
* A PMU *injection* current is the current injected into the bus by its
  generators/loads (generator convention).
* A PMU *flow* current is the current leaving the bus into a branch.
* RTU entries use load convention at the bus: positive active power means
  the bus draws power. For an injection RTU that is the bus load; for a
  flow RTU each entry is the power delivered from one branch into the bus.
  The ``pf_sign`` flag carries the sign of the reactive power (``lagging``
  for Q >= 0) because ``cos(phi)`` alone loses it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from . import interval as iv
from .interval import Interval
from .netmodel import NetworkCase
from .powerflow import PFSolution, compute_branch_currents, compute_injections

__all__ = [
    "Sigmas",
    "MeasurementPlan",
    "PlanError",
    "PmuCurrent",
    "PmuMeasurement",
    "RtuEntry",
    "RtuMeasurement",
    "GBInterval",
    "MeasurementSet",
    "PMU_MODES",
    "PF_NOISE",
    "DEVICE_MIX",
    "default_plan",
    "table_plan",
    "generate_measurements",
    "rtu_to_gb",
    "aggregate_flow_rtu",
    "rtu_admittance",
]

PMU_MODES = ("injection", "flows", "aggregated-injection")
PF_NOISE = ("angle", "cosine")

# buses -> (PMU count, RTU injection %, RTU flow %)
DEVICE_MIX = {
    14: (3, 43, 36),
    57: (7, 47, 40),
    118: (10, 42, 49),
    2869: (205, 43, 50),
    13659: (779, 44, 50),
}

Target = Union[str, int]  # "injection" or a branch index


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Sigmas:
    """Relative standard deviations (fractions, not percent)."""

    rtu_v: float = 0.004
    rtu_i: float = 0.004
    rtu_pf: float = 0.006
    pmu_v: float = 0.0002
    pmu_i: float = 0.0002

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise PlanError(f"sigma {k} must be non-negative, got {v}")

    @classmethod
    def zero(cls) -> "Sigmas":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class MeasurementPlan:
    pmu_buses: tuple[int, ...]
    rtu_injection_buses: tuple[int, ...]
    rtu_flow_buses: tuple[int, ...]
    reference_bus: int
    pmu_modes: dict = field(default_factory=dict)  # bus -> mode, default "flows"
    missing_channels: dict = field(default_factory=dict)  # bus -> unmonitored branch ids
    sigmas: Sigmas = Sigmas()
    seed: int = 0
    pf_noise: str = "angle"  # perturb the phase shift, or "cosine" for cos(phi) itself

    def __post_init__(self):
        object.__setattr__(self, "pmu_buses", tuple(int(b) for b in self.pmu_buses))
        object.__setattr__(self, "rtu_injection_buses", tuple(int(b) for b in self.rtu_injection_buses))
        object.__setattr__(self, "rtu_flow_buses", tuple(int(b) for b in self.rtu_flow_buses))
        object.__setattr__(self, "pmu_modes", {int(k): v for k, v in self.pmu_modes.items()})
        object.__setattr__(
            self, "missing_channels",
            {int(k): tuple(int(x) for x in v) for k, v in self.missing_channels.items()},
        )

    def mode(self, bus: int) -> str:
        return self.pmu_modes.get(bus, "flows")

    def with_seed(self, seed: int) -> "MeasurementPlan":
        return replace(self, seed=int(seed))

    def with_sigmas(self, sigmas: Sigmas) -> "MeasurementPlan":
        return replace(self, sigmas=sigmas)

    def violations(self, case: NetworkCase | None = None, coverage: bool = False) -> list[str]:
        out = []
        if not self.pmu_buses:
            out.append("plan has no PMU (at least one PMU is required as voltage reference)")
        if self.reference_bus not in self.pmu_buses:
            out.append(f"reference bus {self.reference_bus} is not a PMU bus")
        sets = [set(self.pmu_buses), set(self.rtu_injection_buses), set(self.rtu_flow_buses)]
        if sum(map(len, sets)) != len(set().union(*sets)):
            out.append("device bus sets overlap")
        for b, m in self.pmu_modes.items():
            if m not in PMU_MODES:
                out.append(f"unknown PMU mode {m!r} at bus {b}")
        if self.pf_noise not in PF_NOISE:
            out.append(f"unknown power-factor noise model {self.pf_noise!r}")
        for b in self.missing_channels:
            if self.mode(b) != "flows":
                out.append(f"missing channels given for bus {b} whose PMU is not in flows mode")
        if case is not None:
            allbus = set().union(*sets)
            unknown = sorted(b for b in allbus if b not in case.index)
            if unknown:
                out.append(f"plan references unknown buses {unknown}")
            for b, miss in self.missing_channels.items():
                inc = set(case.incident_branches(b)) if b in case.index else set()
                bad = [k for k in miss if k not in inc]
                if bad:
                    out.append(f"missing channels {bad} are not branches incident to bus {b}")
            if coverage:
                unc = [b for b in case.bus_ids if b not in allbus]
                if unc:
                    out.append(f"buses not covered by any device: {unc}")
        return out

    def to_dict(self) -> dict:
        return {
            "pmu_buses": list(self.pmu_buses),
            "rtu_injection_buses": list(self.rtu_injection_buses),
            "rtu_flow_buses": list(self.rtu_flow_buses),
            "reference_bus": self.reference_bus,
            "pmu_modes": {str(k): v for k, v in sorted(self.pmu_modes.items())},
            "missing_channels": {str(k): list(v) for k, v in sorted(self.missing_channels.items())},
            "sigmas": dict(self.sigmas.__dict__),
            "seed": self.seed,
            "pf_noise": self.pf_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementPlan":
        return cls(
            pmu_buses=d["pmu_buses"],
            rtu_injection_buses=d.get("rtu_injection_buses", ()),
            rtu_flow_buses=d.get("rtu_flow_buses", ()),
            reference_bus=d.get("reference_bus", d["pmu_buses"][0] if d["pmu_buses"] else -1),
            pmu_modes=d.get("pmu_modes", {}),
            missing_channels=d.get("missing_channels", {}),
            sigmas=Sigmas(**d.get("sigmas", {})),
            seed=int(d.get("seed", 0)),
            pf_noise=d.get("pf_noise", "angle"),
        )


def table_plan(
    case: NetworkCase,
    n_pmu: int,
    injection_pct: float,
    flow_pct: float,
    sigmas: Sigmas = Sigmas(),
    seed: int = 0,
    pmu_mode: str = "flows",
) -> MeasurementPlan:
    """Deterministic placement from device counts/percentages.

    PMUs go to the highest-degree buses (ties by bus order) and the first of
    them is the angle reference. The remaining buses are split between
    injection and flow RTUs by interleaving in bus order; the injection count
    is ``round(injection_pct * N / 100)`` and flow RTUs take the rest.
    ``flow_pct`` is only checked for consistency.
    """
    for pct in (injection_pct, flow_pct):
        if not 0 <= pct <= 100:
            raise PlanError(f"percentage out of range: {pct}")
    n = case.n_bus
    if not 1 <= n_pmu <= n:
        raise PlanError(f"PMU count must be in [1, {n}], got {n_pmu}")
    deg = case.degree()
    order = sorted(range(n), key=lambda i: (-deg[case.buses[i].id], i))
    pmus = [case.buses[i].id for i in order[:n_pmu]]
    pmu_set = set(pmus)
    rest = [b.id for b in case.buses if b.id not in pmu_set]
    n_inj = min(len(rest), int(round(injection_pct * n / 100.0)))
    inj, flow = [], []
    r = len(rest)
    for j, b in enumerate(rest):
        if (j + 1) * n_inj // r > j * n_inj // r:
            inj.append(b)
        else:
            flow.append(b)
    return MeasurementPlan(
        pmu_buses=tuple(pmus),
        rtu_injection_buses=tuple(inj),
        rtu_flow_buses=tuple(flow),
        reference_bus=pmus[0],
        pmu_modes={b: pmu_mode for b in pmus},
        sigmas=sigmas,
        seed=seed,
    )


def default_plan(case: NetworkCase, sigmas: Sigmas = Sigmas(), seed: int = 0) -> MeasurementPlan:
    """The measurement composition used for the benchmark cases."""
    if case.n_bus in DEVICE_MIX:
        n_pmu, inj, flow = DEVICE_MIX[case.n_bus]
    else:
        n_pmu, inj, flow = max(1, round(0.2 * case.n_bus)), 45, 35
    return table_plan(case, n_pmu, inj, flow, sigmas, seed)


# --------------------------------------------------------------------------
# measurement records
# --------------------------------------------------------------------------


def _target_out(t: Target):
    return t if t == "injection" else int(t)


@dataclass(frozen=True)
class PmuCurrent:
    target: Target
    i_real: Interval
    i_imag: Interval

    def to_dict(self):
        return {"target": _target_out(self.target), "i_real": self.i_real.to_dict(),
                "i_imag": self.i_imag.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(_target_out(d["target"]), Interval.from_dict(d["i_real"]),
                   Interval.from_dict(d["i_imag"]))


@dataclass(frozen=True)
class PmuMeasurement:
    bus: int
    v_real: Interval
    v_imag: Interval
    currents: tuple[PmuCurrent, ...]
    mode: str = "flows"
    missing: tuple[int, ...] = ()

    def to_dict(self):
        return {
            "bus": self.bus,
            "mode": self.mode,
            "v_real": self.v_real.to_dict(),
            "v_imag": self.v_imag.to_dict(),
            "currents": [c.to_dict() for c in self.currents],
            "missing": list(self.missing),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            int(d["bus"]), Interval.from_dict(d["v_real"]), Interval.from_dict(d["v_imag"]),
            tuple(PmuCurrent.from_dict(c) for c in d["currents"]), d.get("mode", "flows"),
            tuple(d.get("missing", ())),
        )


@dataclass(frozen=True)
class RtuEntry:
    target: Target
    i_mag: Interval
    cos_phi: Interval
    pf_sign: str = "lagging"  # lagging: Q >= 0 in load convention
    cos_phi_value: float | None = None  # reported reading; defaults to the midpoint

    def __post_init__(self):
        if self.pf_sign not in ("lagging", "leading"):
            raise ValueError(f"pf_sign must be 'lagging' or 'leading', got {self.pf_sign!r}")
        if self.cos_phi.lo < -1.0 or self.cos_phi.hi > 1.0:
            raise ValueError(f"cos(phi) interval {self.cos_phi} exceeds [-1, 1]")
        if self.i_mag.lo < 0:
            raise ValueError("negative current magnitude")

    @property
    def cos_reading(self) -> float:
        return self.cos_phi.mid if self.cos_phi_value is None else self.cos_phi_value

    def to_dict(self):
        return {"target": _target_out(self.target), "i_mag": self.i_mag.to_dict(),
                "cos_phi": self.cos_phi.to_dict(), "pf_sign": self.pf_sign,
                "cos_phi_value": self.cos_reading}

    @classmethod
    def from_dict(cls, d):
        return cls(_target_out(d["target"]), Interval.from_dict(d["i_mag"]),
                   Interval.from_dict(d["cos_phi"]), d.get("pf_sign", "lagging"),
                   d.get("cos_phi_value"))


@dataclass(frozen=True)
class RtuMeasurement:
    bus: int
    v_mag: Interval
    entries: tuple[RtuEntry, ...]
    kind: str = "injection"  # or "flows"

    def __post_init__(self):
        if self.v_mag.lo <= 0:
            raise ValueError(f"RTU voltage interval at bus {self.bus} must be positive")

    def to_dict(self):
        return {"bus": self.bus, "kind": self.kind, "v_mag": self.v_mag.to_dict(),
                "entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["bus"]), Interval.from_dict(d["v_mag"]),
                   tuple(RtuEntry.from_dict(e) for e in d["entries"]), d.get("kind", "injection"))


@dataclass(frozen=True)
class GBInterval:
    """Interval conductance/susceptance of an RTU load model.

    ``g_mean``/``b_mean`` are the admittance evaluated at the measured
    readings (the most likely value); they fall back to interval midpoints.
    """

    g: Interval
    b: Interval
    g_mean: float | None = None
    b_mean: float | None = None

    @property
    def g_mid(self) -> float:
        return self.g.mid if self.g_mean is None else self.g_mean

    @property
    def b_mid(self) -> float:
        return self.b.mid if self.b_mean is None else self.b_mean

    def __add__(self, other: "GBInterval") -> "GBInterval":
        return GBInterval(self.g + other.g, self.b + other.b,
                          self.g_mid + other.g_mid, self.b_mid + other.b_mid)

    def __sub__(self, other: "GBInterval") -> "GBInterval":
        return GBInterval(self.g - other.g, self.b - other.b,
                          self.g_mid - other.g_mid, self.b_mid - other.b_mid)


def _sin_from_cos(cos_phi: Interval, sign: float) -> Interval:
    # sqrt(1 - c^2) is monotone in |c|
    if cos_phi.lo <= 0.0 <= cos_phi.hi:
        amin = 0.0
    else:
        amin = min(abs(cos_phi.lo), abs(cos_phi.hi))
    amax = max(abs(cos_phi.lo), abs(cos_phi.hi))
    s_lo = math.sqrt(max(0.0, 1.0 - amax * amax))
    s_hi = math.sqrt(max(0.0, 1.0 - amin * amin))
    return Interval(s_lo, s_hi) if sign > 0 else Interval(-s_hi, -s_lo)


def rtu_to_gb(entry: RtuEntry, v_mag: Interval) -> GBInterval:
    """``G = (I/V) cos(phi)``, ``B = (I/V) sin(phi)`` evaluated in interval arithmetic."""
    ratio = iv.div(entry.i_mag, v_mag)
    sign = 1.0 if entry.pf_sign == "lagging" else -1.0
    g = iv.mul(ratio, entry.cos_phi)
    b = iv.mul(ratio, _sin_from_cos(entry.cos_phi, sign))
    r_m = entry.i_mag.mid / v_mag.mid
    c_m = min(1.0, max(-1.0, entry.cos_reading))
    return GBInterval(g, b, r_m * c_m, sign * r_m * math.sqrt(1.0 - c_m * c_m))


def aggregate_flow_rtu(
    m: RtuMeasurement, shunt: complex = 0j, branches: list[int] | None = None
) -> GBInterval:
    """Sum per-branch admittances of a flow RTU into one load admittance.

    ``shunt`` is the case shunt admittance ``Gs + jBs`` at the bus; its
    share of the measured flows is removed because it is stamped separately.
    When ``branches`` is given every listed branch must be covered.
    """
    if branches is not None:
        have = {e.target for e in m.entries}
        miss = [k for k in branches if k not in have]
        if miss:
            raise ValueError(f"flow RTU at bus {m.bus} does not cover branches {miss}")
    if not m.entries:
        raise ValueError(f"flow RTU at bus {m.bus} has no entries")
    total = None
    for e in m.entries:
        gb = rtu_to_gb(e, m.v_mag)
        total = gb if total is None else total + gb
    if shunt != 0:
        # shunt draws |V|^2 (Gs - jBs)
        sh = GBInterval(Interval.point(shunt.real), Interval.point(-shunt.imag))
        total = total - sh
    return total


def rtu_admittance(m: RtuMeasurement, shunt: complex = 0j, branches=None) -> GBInterval:
    if m.kind == "flows":
        return aggregate_flow_rtu(m, shunt, branches)
    if len(m.entries) != 1:
        raise ValueError(f"injection RTU at bus {m.bus} must have exactly one entry")
    return rtu_to_gb(m.entries[0], m.v_mag)


@dataclass
class MeasurementSet:
    pmus: list[PmuMeasurement]
    rtus: list[RtuMeasurement]
    plan: MeasurementPlan
    truth: PFSolution | None = None  # re-referenced to the plan's reference bus

    def pmu(self, bus: int) -> PmuMeasurement:
        for p in self.pmus:
            if p.bus == bus:
                return p
        raise KeyError(bus)

    def rtu(self, bus: int) -> RtuMeasurement:
        for r in self.rtus:
            if r.bus == bus:
                return r
        raise KeyError(bus)

    def to_dict(self) -> dict:
        d = {
            "format": "ecse-measurements/1",
            "plan": self.plan.to_dict(),
            "pmus": [p.to_dict() for p in self.pmus],
            "rtus": [r.to_dict() for r in self.rtus],
        }
        if self.truth is not None:
            d["truth"] = {
                "bus_ids": self.truth.case.bus_ids,
                "v_real": self.truth.v.real.tolist(),
                "v_imag": self.truth.v.imag.tolist(),
            }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, case: NetworkCase | None = None) -> "MeasurementSet":
        truth = None
        if "truth" in d and case is not None:
            v = np.asarray(d["truth"]["v_real"]) + 1j * np.asarray(d["truth"]["v_imag"])
            if list(d["truth"]["bus_ids"]) != case.bus_ids:
                raise ValueError("truth bus ordering does not match case")
            i_from, i_to = compute_branch_currents(case, v)
            i_load, s_load = compute_injections(case, v)
            truth = PFSolution(case, v, i_from, i_to, i_load, s_load, 0, 0.0)
        return cls(
            [PmuMeasurement.from_dict(p) for p in d["pmus"]],
            [RtuMeasurement.from_dict(r) for r in d["rtus"]],
            MeasurementPlan.from_dict(d["plan"]),
            truth,
        )

    @classmethod
    def from_json(cls, text: str, case: NetworkCase | None = None) -> "MeasurementSet":
        return cls.from_dict(json.loads(text), case)


# --------------------------------------------------------------------------
# synthesis
# --------------------------------------------------------------------------


def _noisy_scalar(rng, t: float, sigma: float) -> tuple[float, Interval]:
    u = sigma * rng.uniform(-1.0, 1.0)
    m = t * (1.0 + u)
    return m, iv.from_gaussian(m, sigma * abs(m))


def _noisy_phasor(rng, t: complex, sigma: float) -> tuple[Interval, Interval]:
    # error on each rectangular component scales with the phasor magnitude
    ur, ui = sigma * rng.uniform(-1.0, 1.0, size=2)
    scale = abs(t)
    m = complex(t.real + ur * scale, t.imag + ui * scale)
    s = sigma * abs(m)
    return iv.from_gaussian(m.real, s), iv.from_gaussian(m.imag, s)


def _rtu_entry(rng, target, v: complex, i: complex, sig: Sigmas, pf_noise: str) -> RtuEntry:
    s = v * np.conj(i)
    smag = abs(s)
    cos_t = s.real / smag if smag > 0 else 1.0
    sign = "lagging" if s.imag >= 0 else "leading"
    _, i_int = _noisy_scalar(rng, abs(i), sig.rtu_i)
    if pf_noise == "angle":
        # the device measures the phase shift; cos is monotone on [0, pi]
        phi = float(np.arccos(np.clip(cos_t, -1.0, 1.0)))
        p_m, p_int = _noisy_scalar(rng, phi, sig.rtu_pf)
        p_m = min(np.pi, max(0.0, p_m))
        c_m = float(np.cos(p_m))
        c_int = Interval(float(np.cos(min(np.pi, p_int.hi))), float(np.cos(max(0.0, p_int.lo))))
    else:
        c_m, c_int = _noisy_scalar(rng, cos_t, sig.rtu_pf)
        c_m = min(1.0, max(-1.0, c_m))
        c_int = Interval(max(-1.0, c_int.lo), min(1.0, c_int.hi))
    return RtuEntry(target, i_int, c_int, sign, c_m)


def generate_measurements(truth: PFSolution, plan: MeasurementPlan) -> MeasurementSet:
    """Draw one noisy measurement set around a power-flow solution.

    Every reading is ``m = t (1 + u)`` with ``u`` uniform on
    ``[-sigma, sigma]`` and is reported as ``m +/- 3 sigma |m|``. Phasor
    components use the phasor magnitude as scale. The power-factor error is
    applied to the phase shift phi unless ``plan.pf_noise == "cosine"``.
    All randomness comes from ``plan.seed``.
    """
    case = truth.case
    problems = plan.violations(case)
    if problems:
        raise PlanError("; ".join(problems))
    ref = truth.referenced_to(plan.reference_bus)
    sig = plan.sigmas
    rng = np.random.default_rng(plan.seed)

    def leaving(bus: int, k: int) -> complex:
        br = case.branches[k]
        return ref.i_from[k] if br.from_bus == bus else ref.i_to[k]

    pmus = []
    for bus in plan.pmu_buses:
        i = case.index[bus]
        vr, vi = _noisy_phasor(rng, ref.v[i], sig.pmu_v)
        mode = plan.mode(bus)
        missing = plan.missing_channels.get(bus, ())
        currents = []
        if mode == "injection":
            cr, ci = _noisy_phasor(rng, -ref.i_load[i], sig.pmu_i)
            currents.append(PmuCurrent("injection", cr, ci))
        else:
            for k in case.incident_branches(bus):
                if k in missing:
                    continue
                cr, ci = _noisy_phasor(rng, leaving(bus, k), sig.pmu_i)
                currents.append(PmuCurrent(k, cr, ci))
        pmus.append(PmuMeasurement(bus, vr, vi, tuple(currents), mode, tuple(missing)))

    rtus = []
    for bus in plan.rtu_injection_buses:
        i = case.index[bus]
        _, vm = _noisy_scalar(rng, abs(ref.v[i]), sig.rtu_v)
        e = _rtu_entry(rng, "injection", ref.v[i], ref.i_load[i], sig, plan.pf_noise)
        rtus.append(RtuMeasurement(bus, vm, (e,), "injection"))
    for bus in plan.rtu_flow_buses:
        i = case.index[bus]
        _, vm = _noisy_scalar(rng, abs(ref.v[i]), sig.rtu_v)
        entries = tuple(
            _rtu_entry(rng, k, ref.v[i], -leaving(bus, k), sig, plan.pf_noise)
            for k in case.incident_branches(bus)
        )
        rtus.append(RtuMeasurement(bus, vm, entries, "flows"))
    return MeasurementSet(pmus, rtus, plan, ref)
