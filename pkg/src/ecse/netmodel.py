"""Network cases: MATPOWER text parsing, validation and per-unit grid model."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "Bus",
    "Branch",
    "Gen",
    "NetworkCase",
    "CaseParseError",
    "parse_matpower_case",
    "to_matpower",
    "validate_case",
    "load_case",
    "BUILTIN_CASES",
]

BUILTIN_CASES = ("case9", "case14", "case57", "case118")

PQ, PV, REF, ISOLATED = 1, 2, 3, 4


class CaseParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Bus:
    id: int
    bus_type: int = PQ
    pd: float = 0.0
    qd: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    vm: float = 1.0
    va: float = 0.0
    base_kv: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_total: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    status: bool = True

    @property
    def is_transformer(self) -> bool:
        return self.tap != 1.0 or self.shift != 0.0

    def admittances(self) -> tuple[complex, complex, complex, complex]:
        """Two-port admittances ``(yff, yft, ytf, ytt)`` of the tapped pi-model.

        ``I_from = yff*V_from + yft*V_to`` and ``I_to = ytf*V_from + ytt*V_to``
        with both currents leaving their bus into the branch.
        """
        ys = 1.0 / complex(self.r, self.x)
        ych = 0.5j * self.b_total
        t = self.tap * complex(math.cos(self.shift), math.sin(self.shift))
        yff = (ys + ych) / (self.tap * self.tap)
        yft = -ys / t.conjugate()
        ytf = -ys / t
        ytt = ys + ych
        return yff, yft, ytf, ytt


@dataclass(frozen=True)
class Gen:
    bus: int
    pg: float
    qg: float
    vg: float = 1.0
    status: bool = True


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    gens: tuple[Gen, ...] = ()
    name: str = ""
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "gens", tuple(self.gens))
        idx = {}
        for i, b in enumerate(self.buses):
            # duplicates are reported by validate_case; first occurrence wins here
            idx.setdefault(b.id, i)
        object.__setattr__(self, "index", idx)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def slack_bus(self) -> int | None:
        for b in self.buses:
            if b.bus_type == REF:
                return b.id
        return None

    @property
    def gen_injections(self) -> np.ndarray:
        s = np.zeros(self.n_bus, dtype=complex)
        for g in self.gens:
            if g.status and g.bus in self.index:
                s[self.index[g.bus]] += complex(g.pg, g.qg)
        return s

    @property
    def load_injections(self) -> np.ndarray:
        return np.array([complex(b.pd, b.qd) for b in self.buses], dtype=complex)

    @property
    def shunts(self) -> np.ndarray:
        """Per-bus shunt admittance ``G + jB`` in p.u."""
        return np.array([complex(b.shunt_g, b.shunt_b) for b in self.buses], dtype=complex)

    def in_service(self) -> list[int]:
        return [k for k, br in enumerate(self.branches) if br.status]

    def incident_branches(self, bus_id: int) -> list[int]:
        return [
            k
            for k, br in enumerate(self.branches)
            if br.status and (br.from_bus == bus_id or br.to_bus == bus_id)
        ]

    def degree(self) -> dict[int, int]:
        deg = {b.id: 0 for b in self.buses}
        for br in self.branches:
            if br.status:
                deg[br.from_bus] += 1
                deg[br.to_bus] += 1
        return deg

    def with_branches(self, branches) -> "NetworkCase":
        return NetworkCase(self.base_mva, self.buses, tuple(branches), self.gens, self.name)


# --------------------------------------------------------------------------
# MATPOWER text
# --------------------------------------------------------------------------

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")
_NEEDED = ("bus", "gen", "branch")


def _strip_comment(line: str) -> str:
    # '%' inside quoted strings never occurs in the fields we read
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _read_tables(text: str) -> tuple[float | None, dict[str, list[tuple[int, list[float]]]]]:
    base_mva = None
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = _strip_comment(lines[i])
        i += 1
        m = _ASSIGN.match(line)
        if not m:
            continue
        name, rhs = m.group(1), m.group(2).strip()
        if name == "baseMVA":
            try:
                base_mva = float(rhs.rstrip(";").strip())
            except ValueError:
                raise CaseParseError(f"cannot read baseMVA from {rhs!r}", lineno) from None
            continue
        if rhs.startswith("{"):
            # cell arrays (bus names etc.) are skipped
            depth = rhs.count("{") - rhs.count("}")
            while depth > 0 and i < len(lines):
                seg = _strip_comment(lines[i])
                depth += seg.count("{") - seg.count("}")
                i += 1
            continue
        if not rhs.startswith("["):
            continue
        body = [(lineno, rhs[1:])]
        closed = "]" in rhs
        while not closed:
            if i >= len(lines):
                raise CaseParseError(f"unterminated matrix mpc.{name}", lineno)
            body.append((i + 1, _strip_comment(lines[i])))
            closed = "]" in lines[i].split("%")[0]
            i += 1
        if name not in _NEEDED:
            continue
        rows: list[tuple[int, list[float]]] = []
        for ln, seg in body:
            seg = seg.split("]")[0]
            for chunk in seg.split(";"):
                toks = chunk.replace(",", " ").split()
                if not toks:
                    continue
                try:
                    rows.append((ln, [float(t) for t in toks]))
                except ValueError:
                    bad = next(t for t in toks if not _is_number(t))
                    raise CaseParseError(f"invalid number {bad!r} in mpc.{name}", ln) from None
        tables[name] = rows
    return base_mva, tables


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _check_width(name, rows, width):
    for ln, row in rows:
        if len(row) < width:
            raise CaseParseError(
                f"mpc.{name} row has {len(row)} columns, expected at least {width}", ln
            )


def parse_matpower_case(text: str, name: str = "") -> NetworkCase:
    """Parse the ``baseMVA``/``bus``/``gen``/``branch`` subset of a MATPOWER case.

    Powers are divided by ``baseMVA``, angles converted to radians, and a
    zero tap ratio normalized to 1.0.
    """
    base_mva, tables = _read_tables(text)
    if base_mva is None:
        raise CaseParseError("missing mpc.baseMVA")
    if base_mva <= 0:
        raise CaseParseError(f"baseMVA must be positive, got {base_mva}")
    for t in _NEEDED:
        if t not in tables:
            raise CaseParseError(f"missing mpc.{t} matrix")
    _check_width("bus", tables["bus"], 13)
    _check_width("gen", tables["gen"], 8)
    _check_width("branch", tables["branch"], 11)

    buses = []
    seen = {}
    for ln, row in tables["bus"]:
        bid = int(row[0])
        if bid in seen:
            raise CaseParseError(f"duplicate bus id {bid} (first defined on line {seen[bid]})", ln)
        seen[bid] = ln
        buses.append(
            Bus(
                id=bid,
                bus_type=int(row[1]),
                pd=row[2] / base_mva,
                qd=row[3] / base_mva,
                shunt_g=row[4] / base_mva,
                shunt_b=row[5] / base_mva,
                vm=row[7],
                va=math.radians(row[8]),
                base_kv=row[9],
            )
        )

    gens = []
    for ln, row in tables["gen"]:
        if int(row[0]) not in seen:
            raise CaseParseError(f"generator references unknown bus {int(row[0])}", ln)
        gens.append(
            Gen(
                bus=int(row[0]),
                pg=row[1] / base_mva,
                qg=row[2] / base_mva,
                vg=row[5],
                status=row[7] > 0,
            )
        )

    branches = []
    for ln, row in tables["branch"]:
        f, t = int(row[0]), int(row[1])
        for b in (f, t):
            if b not in seen:
                raise CaseParseError(f"branch references unknown bus {b}", ln)
        tap = row[8] if row[8] != 0.0 else 1.0
        branches.append(
            Branch(
                from_bus=f,
                to_bus=t,
                r=row[2],
                x=row[3],
                b_total=row[4],
                tap=tap,
                shift=math.radians(row[9]),
                status=row[10] > 0,
            )
        )
    return NetworkCase(base_mva, tuple(buses), tuple(branches), tuple(gens), name)


def _fmt(v: float) -> str:
    return repr(float(v))


def to_matpower(case: NetworkCase) -> str:
    """Serialize back to MATPOWER text (only the fields this package reads)."""
    base = case.base_mva
    out = [
        f"function mpc = {case.name or 'case'}",
        "mpc.version = '2';",
        f"mpc.baseMVA = {_fmt(base)};",
        "",
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        "mpc.bus = [",
    ]
    for b in case.buses:
        vals = [b.id, b.bus_type, b.pd * base, b.qd * base, b.shunt_g * base,
                b.shunt_b * base, 1, b.vm, math.degrees(b.va), b.base_kv, 1, 1.1, 0.9]
        out.append("\t" + "\t".join(_fmt(v) if isinstance(v, float) else str(v) for v in vals) + ";")
    out += ["];", "", "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus", "mpc.gen = ["]
    for g in case.gens:
        vals = [g.bus, g.pg * base, g.qg * base, 0.0, 0.0, g.vg, base, int(g.status)]
        out.append("\t" + "\t".join(_fmt(v) if isinstance(v, float) else str(v) for v in vals) + ";")
    out += ["];", "", "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus",
            "mpc.branch = ["]
    for br in case.branches:
        vals = [br.from_bus, br.to_bus, br.r, br.x, br.b_total, 0.0, 0.0, 0.0,
                br.tap, math.degrees(br.shift), int(br.status)]
        out.append("\t" + "\t".join(_fmt(v) if isinstance(v, float) else str(v) for v in vals) + ";")
    out.append("];")
    return "\n".join(out) + "\n"


def load_case(name_or_path: str | Path) -> NetworkCase:
    """Load a bundled case by name (``case14``) or a ``.m`` file by path."""
    p = Path(name_or_path)
    if p.is_file():
        return parse_matpower_case(p.read_text(), name=p.stem)
    stem = p.stem if p.suffix == ".m" else str(name_or_path)
    stem = {"ieee14": "case14", "ieee57": "case57", "ieee118": "case118", "ieee9": "case9"}.get(stem, stem)
    if stem in BUILTIN_CASES and p.parent == Path("."):
        text = resources.files("ecse.data").joinpath(f"{stem}.m").read_text()
        return parse_matpower_case(text, name=stem)
    raise FileNotFoundError(f"case file not found: {name_or_path}")


def validate_case(c: NetworkCase) -> list[str]:
    """Return human-readable violations; an empty list means the case is usable."""
    problems = []
    seen = set()
    for b in c.buses:
        if b.id in seen:
            problems.append(f"duplicate bus id {b.id}")
        seen.add(b.id)
        if not (math.isfinite(b.shunt_g) and math.isfinite(b.shunt_b)):
            problems.append(f"non-finite shunt at bus {b.id}")
    slack = [b.id for b in c.buses if b.bus_type == REF]
    if not slack:
        problems.append("no slack bus")
    elif len(slack) > 1:
        problems.append(f"multiple slack buses {slack}")
    for k, br in enumerate(c.branches):
        if br.from_bus not in c.index or br.to_bus not in c.index:
            problems.append(f"branch {k} references unknown bus")
            continue
        if br.tap <= 0:
            problems.append(f"non-positive tap on branch {k}")
        if br.status and br.r == 0.0 and br.x == 0.0:
            problems.append(f"zero-impedance branch {k} ({br.from_bus}-{br.to_bus})")
    live = [br for br in c.branches if br.status and br.from_bus in c.index and br.to_bus in c.index]
    if not live:
        problems.append("no in-service branches")
    if c.n_bus > 0:
        parent = list(range(c.n_bus))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for br in live:
            ra, rb = find(c.index[br.from_bus]), find(c.index[br.to_bus])
            if ra != rb:
                parent[ra] = rb
        roots = {find(i) for i in range(c.n_bus)}
        if len(roots) > 1:
            problems.append(f"disconnected component: {len(roots)} islands")
    return problems
