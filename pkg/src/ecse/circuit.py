"""Coupled real/imaginary split circuit assembled by modified nodal analysis.

Every electrical node owns two unknowns (real and imaginary potential) and
two KCL rows. A KCL row sums the currents *leaving* the node through the
elements attached to it; ground has no unknown.

PMU model (per sub-circuit): an ideal voltage source ``V_PMU`` holds the
PMU source node; each measured current is a link from the source node to a
terminal made of a current source ``I_PMU`` in parallel with the fixed
conductance ``g_pmu``. The conductance current ``I_GPMU = g_pmu (V_PMU -
V_T)`` is a variable of its own::

                   +--[ I_PMU ]--+
    (src)---+------|             |-----(T)  bus node (injection mode)
            |      +--[ g_pmu ]--+          or line terminal (flows mode)
          V_PMU
            |
           gnd

In ``flows`` mode the bus node itself is the source node and every
monitored branch is attached to its own terminal node; unmonitored branches
stay on the bus node, i.e. directly on the voltage source.

RTU model: a load drawing ``I = (G - jB) V``, that is ``I_R = G V_R + B
V_I`` and ``I_I = G V_I - B V_R``, with ``G``/``B`` bounded variables. These
four products are the only nonlinear entries of the system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .interval import Interval
from .measurement import GBInterval, MeasurementSet, PmuMeasurement, rtu_admittance
from .netmodel import Branch, NetworkCase

__all__ = [
    "CircuitError",
    "VariableIndex",
    "LinearStamp",
    "BilinearTerm",
    "SplitCircuit",
    "line_parameters",
    "stamp_line",
    "stamp_transformer",
    "stamp_branch",
    "stamp_shunt",
    "stamp_pmu_injection",
    "stamp_pmu_flows",
    "stamp_rtu",
    "assemble",
    "truth_point",
    "solve_frozen",
    "dump_circuit",
]

# grouping order of the state vector: V, G, B, V_PMU, I_PMU, I_GPMU, I_VPMU
KIND_ORDER = (
    "node_voltage_real",
    "node_voltage_imag",
    "rtu_g",
    "rtu_b",
    "pmu_source_voltage",
    "pmu_source_current",
    "pmu_slack_current",
    "vsource_current",
)

RE, IM = "R", "I"


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class VariableIndex:
    kind: str
    owner: tuple
    part: str
    index: int


@dataclass(frozen=True)
class LinearStamp:
    row: int
    col: int
    coeff: float


@dataclass(frozen=True)
class BilinearTerm:
    row: int
    var_a: int  # rtu_g / rtu_b
    var_b: int  # node voltage
    coeff: float


def _owner_str(owner: tuple) -> str:
    return ":".join(str(o) for o in owner)


@dataclass
class _Node:
    vr: int
    vi: int
    row_r: int
    row_i: int


class SplitCircuit:
    """MNA structure under construction; call :meth:`freeze` when complete.

    Freezing reorders the unknowns into the grouped layout ``[V, G, B,
    V_PMU, I_PMU, I_GPMU, I_VPMU]`` and builds the sparse arrays used by
    the estimator.
    """

    def __init__(self, g_pmu: float = 10.0):
        if g_pmu <= 0:
            raise CircuitError(f"g_pmu must be positive, got {g_pmu}")
        self.g_pmu = float(g_pmu)
        self._vars: list[tuple[str, tuple, str]] = []
        self._var_id: dict[tuple, int] = {}
        self._lo: list[float] = []
        self._hi: list[float] = []
        self.row_labels: list[tuple] = []
        self._row_id: dict[tuple, int] = {}
        self._lin: list[tuple[int, int, float]] = []
        self._bil: list[tuple[int, int, int, float]] = []
        self._rhs: dict[int, float] = {}
        self.nodes: dict[tuple, _Node] = {}
        self.bus_node: dict[int, tuple] = {}
        self.terminal: dict[tuple[int, int], tuple] = {}
        self.pmu_source_node: dict[int, tuple] = {}
        self._slack: list[int] = []
        self._rtu: list[tuple[int, int, float, float, int]] = []
        self.rtu_buses: set[int] = set()
        self.aggregated_buses: set[int] = set()
        self.frozen = False

    # -- construction primitives -------------------------------------------------

    def _check_open(self):
        if self.frozen:
            raise CircuitError("circuit is frozen")

    def add_variable(self, kind: str, owner: tuple, part: str = "",
                     bounds: Interval | None = None) -> int:
        self._check_open()
        key = (kind, owner, part)
        if key in self._var_id:
            raise CircuitError(f"duplicate variable {kind} {_owner_str(owner)} {part}")
        vid = len(self._vars)
        self._vars.append(key)
        self._var_id[key] = vid
        self._lo.append(-math.inf if bounds is None else bounds.lo)
        self._hi.append(math.inf if bounds is None else bounds.hi)
        return vid

    def add_row(self, label: tuple) -> int:
        self._check_open()
        if label in self._row_id:
            raise CircuitError(f"duplicate row {label}")
        rid = len(self.row_labels)
        self.row_labels.append(label)
        self._row_id[label] = rid
        return rid

    def add_node(self, key: tuple) -> _Node:
        if key in self.nodes:
            raise CircuitError(f"duplicate node {_owner_str(key)}")
        vr = self.add_variable("node_voltage_real", key, RE)
        vi = self.add_variable("node_voltage_imag", key, IM)
        rr = self.add_row(("kcl", key, RE))
        ri = self.add_row(("kcl", key, IM))
        node = _Node(vr, vi, rr, ri)
        self.nodes[key] = node
        return node

    def lin(self, row: int, col: int, coeff: float):
        self._check_open()
        if coeff != 0.0:
            if not math.isfinite(coeff):
                raise CircuitError("non-finite stamp coefficient")
            self._lin.append((row, col, float(coeff)))

    def bil(self, row: int, a: int, b: int, coeff: float):
        self._check_open()
        self._bil.append((row, a, b, float(coeff)))

    def couple(self, at: _Node, y: complex, of: _Node):
        """Add the current ``y * V(of)`` to the KCL rows of ``at``."""
        g, s = y.real, y.imag
        self.lin(at.row_r, of.vr, g)
        self.lin(at.row_r, of.vi, -s)
        self.lin(at.row_i, of.vr, s)
        self.lin(at.row_i, of.vi, g)

    def node_for(self, bus: int, branch: int | None = None) -> _Node:
        if branch is not None and (bus, branch) in self.terminal:
            return self.nodes[self.terminal[(bus, branch)]]
        return self.nodes[self.bus_node[bus]]

    # -- finished structure --------------------------------------------------------

    def freeze(self) -> "SplitCircuit":
        if self.frozen:
            return self
        rank = {k: i for i, k in enumerate(KIND_ORDER)}
        order = sorted(range(len(self._vars)), key=lambda v: (rank[self._vars[v][0]], v))
        new_of = np.empty(len(order), dtype=int)
        new_of[order] = np.arange(len(order))
        self.variables = [
            VariableIndex(self._vars[old][0], self._vars[old][1], self._vars[old][2], int(new_of[old]))
            for old in order
        ]
        self.lo = np.array([self._lo[old] for old in order])
        self.hi = np.array([self._hi[old] for old in order])
        self.var_index = {(v.kind, v.owner, v.part): v.index for v in self.variables}
        self.linear = [LinearStamp(r, int(new_of[c]), v) for r, c, v in self._lin]
        self.bilinear = [BilinearTerm(r, int(new_of[a]), int(new_of[b]), v) for r, a, b, v in self._bil]
        self.rhs = np.zeros(len(self.row_labels))
        for r, v in self._rhs.items():
            self.rhs[r] = v
        self.pmu_slack_currents = [int(new_of[v]) for v in self._slack]
        self.rtu_params = [(int(new_of[g]), int(new_of[b]), gm, bm) for g, b, gm, bm, _ in self._rtu]
        self.rtu_param_buses = [bus for *_, bus in self._rtu]
        for node in self.nodes.values():
            node.vr, node.vi = int(new_of[node.vr]), int(new_of[node.vi])
        m, n = len(self.row_labels), len(self.variables)
        if self.linear:
            r, c, v = zip(*((s.row, s.col, s.coeff) for s in self.linear))
        else:
            r, c, v = (), (), ()
        self.A = sp.csr_matrix((np.array(v, dtype=float), (np.array(r, dtype=int), np.array(c, dtype=int))),
                               shape=(m, n))
        self.bil_row = np.array([t.row for t in self.bilinear], dtype=int)
        self.bil_a = np.array([t.var_a for t in self.bilinear], dtype=int)
        self.bil_b = np.array([t.var_b for t in self.bilinear], dtype=int)
        self.bil_coef = np.array([t.coeff for t in self.bilinear], dtype=float)
        self.frozen = True
        return self

    @property
    def n_vars(self) -> int:
        return len(self._vars)

    @property
    def n_rows(self) -> int:
        return len(self.row_labels)

    def var(self, kind: str, owner: tuple, part: str = "") -> int:
        return self.var_index[(kind, owner, part)]

    def bus_voltage_indices(self, bus_ids) -> np.ndarray:
        return np.array([[self.nodes[self.bus_node[b]].vr, self.nodes[self.bus_node[b]].vi]
                         for b in bus_ids], dtype=int)

    def residual(self, x: np.ndarray) -> np.ndarray:
        r = self.A @ x - self.rhs
        if len(self.bil_row):
            np.add.at(r, self.bil_row, self.bil_coef * x[self.bil_a] * x[self.bil_b])
        return r

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        m, n = self.A.shape
        if not len(self.bil_row):
            return self.A
        rows = np.concatenate([self.bil_row, self.bil_row])
        cols = np.concatenate([self.bil_a, self.bil_b])
        vals = np.concatenate([self.bil_coef * x[self.bil_b], self.bil_coef * x[self.bil_a]])
        return (self.A + sp.csr_matrix((vals, (rows, cols)), shape=(m, n))).tocsr()

    def nonlinear_rows(self) -> np.ndarray:
        mask = np.zeros(self.n_rows, dtype=bool)
        mask[self.bil_row] = True
        return mask

    def kcl_rows(self) -> list[int]:
        return [i for i, lab in enumerate(self.row_labels) if lab[0] == "kcl"]


# --------------------------------------------------------------------------
# element stamps
# --------------------------------------------------------------------------


def line_parameters(br: Branch) -> tuple[float, float, float]:
    """``(Y_G, Y_B, Y_sh)`` of the split-circuit line model."""
    z2 = br.r * br.r + br.x * br.x
    if z2 == 0.0:
        raise CircuitError(f"zero-impedance branch {br.from_bus}-{br.to_bus}")
    return br.r / z2, br.x / z2, 0.5 * br.b_total


def stamp_line(sc: SplitCircuit, br: Branch, k: int | None = None):
    """Plain line: conductance ``Y_G``, cross-coupled sources ``Y_B`` and
    charging ``Y_sh`` at each end.

    Real circuit current from ``f`` to ``t``: ``Y_G dV_R + Y_B dV_I``;
    imaginary circuit: ``Y_G dV_I - Y_B dV_R``. Charging at each end draws
    ``-Y_sh V_I`` (real) and ``Y_sh V_R`` (imaginary).
    """
    if br.is_transformer:
        raise CircuitError("stamp_line needs tap = 1 and shift = 0; use stamp_transformer")
    yg, yb, ysh = line_parameters(br)
    f, t = sc.node_for(br.from_bus, k), sc.node_for(br.to_bus, k)
    for a, b in ((f, t), (t, f)):
        # series branch seen from node a
        sc.lin(a.row_r, a.vr, yg)
        sc.lin(a.row_r, b.vr, -yg)
        sc.lin(a.row_r, a.vi, yb)
        sc.lin(a.row_r, b.vi, -yb)
        sc.lin(a.row_i, a.vi, yg)
        sc.lin(a.row_i, b.vi, -yg)
        sc.lin(a.row_i, a.vr, -yb)
        sc.lin(a.row_i, b.vr, yb)
        # half charging to ground
        sc.lin(a.row_r, a.vi, -ysh)
        sc.lin(a.row_i, a.vr, ysh)


def stamp_transformer(sc: SplitCircuit, br: Branch, k: int | None = None):
    """Pi-model behind an ideal complex-tap transformer ``t = tap e^{j shift}``
    on the from side."""
    if br.tap <= 0:
        raise CircuitError(f"non-positive tap {br.tap} on branch {br.from_bus}-{br.to_bus}")
    line_parameters(br)  # rejects zero impedance
    yff, yft, ytf, ytt = br.admittances()
    f, t = sc.node_for(br.from_bus, k), sc.node_for(br.to_bus, k)
    sc.couple(f, yff, f)
    sc.couple(f, yft, t)
    sc.couple(t, ytf, f)
    sc.couple(t, ytt, t)


def stamp_branch(sc: SplitCircuit, br: Branch, k: int | None = None):
    if br.is_transformer:
        stamp_transformer(sc, br, k)
    else:
        stamp_line(sc, br, k)


def stamp_shunt(sc: SplitCircuit, node_key: tuple, y: complex):
    if y != 0:
        node = sc.nodes[node_key]
        sc.couple(node, y, node)


def _pmu_source(sc: SplitCircuit, m: PmuMeasurement, src: _Node) -> tuple[int, int]:
    bus = m.bus
    owner = ("pmu", bus)
    vr = sc.add_variable("pmu_source_voltage", owner, RE, m.v_real)
    vi = sc.add_variable("pmu_source_voltage", owner, IM, m.v_imag)
    jr = sc.add_variable("vsource_current", owner, RE)
    ji = sc.add_variable("vsource_current", owner, IM)
    for part, vnode, vsrc, j, krow in ((RE, src.vr, vr, jr, src.row_r), (IM, src.vi, vi, ji, src.row_i)):
        row = sc.add_row(("vsrc", owner, part))
        sc.lin(row, vnode, 1.0)
        sc.lin(row, vsrc, -1.0)
        # the source delivers j into its node
        sc.lin(krow, j, -1.0)
    return vr, vi


def _pmu_link(sc: SplitCircuit, bus: int, target, src: _Node, term: _Node,
              vsrc: tuple[int, int], i_real: Interval, i_imag: Interval):
    owner = ("pmu", bus, target)
    g = sc.g_pmu
    for part, bounds, vs, s_row, t_row, t_var in (
        (RE, i_real, vsrc[0], src.row_r, term.row_r, term.vr),
        (IM, i_imag, vsrc[1], src.row_i, term.row_i, term.vi),
    ):
        ip = sc.add_variable("pmu_source_current", owner, part, bounds)
        ig = sc.add_variable("pmu_slack_current", owner, part)
        sc._slack.append(ig)
        # link current src -> term is ip + ig
        sc.lin(s_row, ip, 1.0)
        sc.lin(s_row, ig, 1.0)
        sc.lin(t_row, ip, -1.0)
        sc.lin(t_row, ig, -1.0)
        row = sc.add_row(("gpmu", owner, part))
        sc.lin(row, ig, 1.0)
        sc.lin(row, vs, -g)
        sc.lin(row, t_var, g)


def stamp_pmu_injection(sc: SplitCircuit, m: PmuMeasurement, current: tuple[Interval, Interval] | None = None):
    """Voltage source on a private node linked to the bus by one current channel.

    ``current`` overrides the injection interval (used by the aggregated mode).
    """
    bus = m.bus
    if bus in sc.pmu_source_node:
        raise CircuitError(f"duplicate PMU on bus {bus}")
    if current is None:
        inj = [c for c in m.currents if c.target == "injection"]
        if len(inj) != 1:
            raise CircuitError(f"PMU at bus {bus} needs exactly one injection current")
        current = (inj[0].i_real, inj[0].i_imag)
    key = ("pmu", bus)
    src = sc.add_node(key)
    sc.pmu_source_node[bus] = key
    vs = _pmu_source(sc, m, src)
    _pmu_link(sc, bus, "injection", src, sc.nodes[sc.bus_node[bus]], vs, *current)


def stamp_pmu_flows(sc: SplitCircuit, m: PmuMeasurement, case: NetworkCase):
    """Bus node held by the voltage source; one channel per monitored branch.

    Must run before the branches are stamped so they attach to the
    terminal nodes created here.
    """
    bus = m.bus
    if bus in sc.pmu_source_node:
        raise CircuitError(f"duplicate PMU on bus {bus}")
    incident = set(case.incident_branches(bus))
    for c in m.currents:
        if c.target == "injection" or int(c.target) not in incident:
            raise CircuitError(f"PMU at bus {bus}: current target {c.target!r} is not an incident branch")
    src = sc.nodes[sc.bus_node[bus]]
    sc.pmu_source_node[bus] = sc.bus_node[bus]
    vs = _pmu_source(sc, m, src)
    for c in m.currents:
        k = int(c.target)
        key = ("term", bus, k)
        term = sc.add_node(key)
        sc.terminal[(bus, k)] = key
        _pmu_link(sc, bus, k, src, term, vs, c.i_real, c.i_imag)


def stamp_pmu_aggregated(sc: SplitCircuit, m: PmuMeasurement):
    """Injection model whose current interval is the sum of all flow intervals."""
    from .interval import interval_sum

    flows = [c for c in m.currents if c.target != "injection"]
    if not flows:
        raise CircuitError(f"aggregated PMU at bus {m.bus} has no flow currents")
    cur = (interval_sum(c.i_real for c in flows), interval_sum(c.i_imag for c in flows))
    stamp_pmu_injection(sc, m, cur)
    sc.aggregated_buses.add(m.bus)


def stamp_rtu(sc: SplitCircuit, gb: GBInterval, bus: int):
    """Bounded load admittance ``G``/``B`` at ``bus`` (four bilinear KCL terms)."""
    node = sc.nodes[sc.bus_node[bus]]
    owner = ("rtu", bus)
    g = sc.add_variable("rtu_g", owner, "", gb.g)
    b = sc.add_variable("rtu_b", owner, "", gb.b)
    sc.bil(node.row_r, g, node.vr, 1.0)
    sc.bil(node.row_r, b, node.vi, 1.0)
    sc.bil(node.row_i, g, node.vi, 1.0)
    sc.bil(node.row_i, b, node.vr, -1.0)
    sc._rtu.append((g, b, gb.g_mid, gb.b_mid, bus))
    sc.rtu_buses.add(bus)


def assemble(case: NetworkCase, ms: MeasurementSet, g_pmu: float = 10.0,
             rtu_target: str = "reading") -> SplitCircuit:
    """Build the complete split circuit for one measurement set.

    ``rtu_target`` selects the most likely RTU admittance used by the
    objective: ``"reading"`` evaluates G/B at the reported readings,
    ``"midpoint"`` takes the midpoints of the G/B intervals.
    """
    if rtu_target not in ("reading", "midpoint"):
        raise CircuitError(f"unknown rtu_target {rtu_target!r}")
    if not ms.pmus:
        raise CircuitError("no PMU in the measurement set: at least one voltage source is "
                           "needed to provide a reference")
    covered: dict[int, str] = {}
    for p in ms.pmus:
        if p.bus in covered:
            raise CircuitError(f"duplicate PMU on bus {p.bus}")
        covered[p.bus] = "pmu"
    for r in ms.rtus:
        if r.bus in covered:
            raise CircuitError(f"bus {r.bus} covered by more than one device")
        covered[r.bus] = "rtu"
    unknown = [b for b in covered if b not in case.index]
    if unknown:
        raise CircuitError(f"measurements reference unknown buses {unknown}")
    missing = [b for b in case.bus_ids if b not in covered]
    if missing:
        raise CircuitError(f"system not observable: buses {missing} are not covered by any device")

    sc = SplitCircuit(g_pmu)
    for b in case.bus_ids:
        sc.bus_node[b] = ("bus", b)
        sc.add_node(("bus", b))

    for p in ms.pmus:
        if p.mode == "injection":
            stamp_pmu_injection(sc, p)
        elif p.mode == "aggregated-injection":
            stamp_pmu_aggregated(sc, p)
        elif p.mode == "flows":
            stamp_pmu_flows(sc, p, case)
        else:
            raise CircuitError(f"unknown PMU mode {p.mode!r}")

    for k, br in enumerate(case.branches):
        if br.status:
            stamp_branch(sc, br, k)

    for bus in case.buses:
        y = complex(bus.shunt_g, bus.shunt_b)
        # aggregated PMU current covers the line flows only; the source feeds the shunt
        key = sc.pmu_source_node[bus.id] if bus.id in sc.aggregated_buses else sc.bus_node[bus.id]
        stamp_shunt(sc, key, y)

    for r in ms.rtus:
        b = case.buses[case.index[r.bus]]
        gb = rtu_admittance(r, complex(b.shunt_g, b.shunt_b) if r.kind == "flows" else 0j,
                            case.incident_branches(r.bus) if r.kind == "flows" else None)
        if rtu_target == "midpoint":
            gb = GBInterval(gb.g, gb.b)
        stamp_rtu(sc, gb, r.bus)
    sc.case = case
    sc.bus_ids = case.bus_ids
    sc.reference_bus = ms.plan.reference_bus
    return sc.freeze()


# --------------------------------------------------------------------------
# helpers for checks against the power-flow reference
# --------------------------------------------------------------------------


def truth_point(sc: SplitCircuit, truth) -> np.ndarray:
    """State vector implied by a power-flow solution (zero slack currents)."""
    case = truth.case
    x = np.zeros(sc.n_vars)
    v = truth.v
    for key, node in sc.nodes.items():
        bus = key[1]
        val = v[case.index[bus]]
        x[node.vr], x[node.vi] = val.real, val.imag
    for var in sc.variables:
        owner = var.owner
        if var.kind in ("rtu_g", "rtu_b"):
            i = case.index[owner[1]]
            y = truth.s_load[i] / abs(v[i]) ** 2
            x[var.index] = y.real if var.kind == "rtu_g" else y.imag
        elif var.kind == "pmu_source_voltage":
            val = v[case.index[owner[1]]]
            x[var.index] = val.real if var.part == RE else val.imag
        elif var.kind == "vsource_current":
            val = -truth.i_load[case.index[owner[1]]]
            x[var.index] = val.real if var.part == RE else val.imag
        elif var.kind == "pmu_source_current":
            bus, target = owner[1], owner[2]
            i = case.index[bus]
            if target == "injection":
                val = -truth.i_load[i]
                if bus in sc.aggregated_buses:
                    # the aggregated channel carries line flows only
                    b = case.buses[i]
                    val -= complex(b.shunt_g, b.shunt_b) * v[i]
            else:
                br = case.branches[target]
                val = truth.i_from[target] if br.from_bus == bus else truth.i_to[target]
            x[var.index] = val.real if var.part == RE else val.imag
    return x


def solve_frozen(sc: SplitCircuit, values: np.ndarray | None = None) -> np.ndarray:
    """Solve the circuit with every bounded variable frozen.

    Bounded variables take ``values`` (default: interval midpoints); the
    remaining unknowns follow from the now linear MNA system.
    """
    bounded = np.isfinite(sc.lo) & np.isfinite(sc.hi)
    x = np.zeros(sc.n_vars)
    x[bounded] = 0.5 * (sc.lo[bounded] + sc.hi[bounded]) if values is None else values[bounded]
    free = np.flatnonzero(~bounded)
    jac = sc.jacobian(x).tocsc()[:, free]
    if jac.shape[0] != jac.shape[1]:
        raise CircuitError(f"frozen circuit is not square: {jac.shape}")
    r = sc.residual(x)
    x[free] = -splu(jac).solve(r)
    return x


# --------------------------------------------------------------------------
# text dump
# --------------------------------------------------------------------------


def _num(v: float) -> str:
    return f"{v:.12g}"


def dump_circuit(sc: SplitCircuit) -> str:
    """Netlist-like listing of unknowns, bounds and per-row stamps."""
    lines = [f"* split circuit: {sc.n_vars} unknowns, {sc.n_rows} rows, g_pmu={_num(sc.g_pmu)}"]
    lines.append("* unknowns")
    for v in sc.variables:
        lo, hi = sc.lo[v.index], sc.hi[v.index]
        b = "free" if not (math.isfinite(lo) or math.isfinite(hi)) else f"[{_num(lo)}, {_num(hi)}]"
        lines.append(f"x{v.index} {v.kind} {_owner_str(v.owner)} {v.part} {b}".replace("  ", " "))
    by_row: dict[int, list[str]] = {}
    for s in sorted(sc.linear, key=lambda s: (s.row, s.col)):
        by_row.setdefault(s.row, []).append(f"{_num(s.coeff)}*x{s.col}")
    for t in sc.bilinear:
        by_row.setdefault(t.row, []).append(f"{_num(t.coeff)}*x{t.var_a}*x{t.var_b}")
    lines.append("* rows")
    for r, lab in enumerate(sc.row_labels):
        terms = " + ".join(by_row.get(r, [])) or "0"
        name = " ".join(str(p) if not isinstance(p, tuple) else _owner_str(p) for p in lab)
        lines.append(f"r{r} {name}: {terms} = {_num(sc.rhs[r])}")
    return "\n".join(lines) + "\n"
