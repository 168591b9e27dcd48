"""MATPOWER case ingestion and the canonical JSON form of a bus-branch model."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import networkx as nx

from .errors import CaseParseError, CaseValidationError

__all__ = [
    "GridCase",
    "parse_matpower_case",
    "to_canonical_json",
    "from_canonical_json",
    "load_case",
    "BUNDLED_CASES",
]

BUNDLED_CASES = ("case14", "case30")

# 1-based MATPOWER column numbers
_BUS_ID, _BUS_TYPE, _BUS_AREA = 1, 2, 7
_BR_FROM, _BR_TO, _BR_X, _BR_STATUS = 1, 2, 4, 11
_SLACK_TYPE = 3


@dataclass(frozen=True)
class GridCase:
    """Bus-branch model: buses with area labels, branches with susceptances.

    ``buses`` is a tuple of ``(bus_id, area)`` sorted by id and ``branches`` a
    tuple of ``(from_bus, to_bus, b)`` with ``from_bus < to_bus``, sorted, one
    entry per connected bus pair.  Construction validates every invariant.
    """

    buses: tuple[tuple[int, int], ...]
    branches: tuple[tuple[int, int, float], ...]
    slack: int
    base_mva: float = 100.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        buses = tuple(sorted((int(b), int(a)) for b, a in self.buses))
        ids = [b for b, _ in buses]
        if len(set(ids)) != len(ids):
            raise CaseValidationError("duplicate bus ids")
        known = set(ids)
        merged: dict[tuple[int, int], float] = {}
        for f, t, b in self.branches:
            f, t, b = int(f), int(t), float(b)
            if f not in known or t not in known:
                raise CaseValidationError(f"branch {f}-{t} references an undeclared bus")
            if f == t:
                raise CaseValidationError(f"self-loop on bus {f}")
            if not math.isfinite(b) or b <= 0:
                raise CaseValidationError(f"branch {f}-{t} has non-positive susceptance {b}")
            key = (min(f, t), max(f, t))
            merged[key] = merged.get(key, 0.0) + b
        branches = tuple((f, t, merged[(f, t)]) for f, t in sorted(merged))
        if int(self.slack) not in known:
            raise CaseValidationError(f"slack bus {self.slack} is not declared")
        if not (math.isfinite(self.base_mva) and self.base_mva > 0):
            raise CaseValidationError("base_mva must be positive")
        object.__setattr__(self, "buses", buses)
        object.__setattr__(self, "branches", branches)
        object.__setattr__(self, "slack", int(self.slack))
        object.__setattr__(self, "base_mva", float(self.base_mva))
        if len(ids) > 1 and not nx.is_connected(self.graph()):
            raise CaseValidationError("branch graph is not connected")

    @property
    def bus_ids(self) -> list[int]:
        return [b for b, _ in self.buses]

    @property
    def areas(self) -> dict[int, int]:
        return dict(self.buses)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.bus_ids)
        for f, t, b in self.branches:
            g.add_edge(f, t, b=b)
        return g

    def edges(self) -> set[tuple[int, int]]:
        return {(f, t) for f, t, _ in self.branches}


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


def _collect_blocks(text: str):
    """Split MATPOWER text into ``{name: (kind, payload)}``.

    Matrix payloads are lists of ``(line_no, [tokens])`` rows.
    """
    blocks = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line_no = i + 1
        body = _strip_comment(lines[i])
        m = _ASSIGN.match(body)
        i += 1
        if not m:
            continue
        name, rest = m.group(1), m.group(2).strip()
        if rest.startswith("{"):
            # cell arrays (bus names etc.) are skipped
            while "}" not in rest and i < len(lines):
                rest = _strip_comment(lines[i])
                i += 1
            continue
        if not rest.startswith("["):
            value = rest.rstrip(";").strip()
            blocks[name] = ("scalar", (line_no, value))
            continue
        rows = []
        chunk, chunk_line = rest[1:], line_no
        while True:
            closed = "]" in chunk
            if closed:
                chunk = chunk[: chunk.index("]")]
            for piece in chunk.split(";"):
                tokens = piece.replace(",", " ").split()
                if tokens:
                    rows.append((chunk_line, tokens))
            if closed:
                break
            if i >= len(lines):
                raise CaseParseError(f"unterminated matrix block mpc.{name}", line_no)
            chunk, chunk_line = _strip_comment(lines[i]), i + 1
            i += 1
        blocks[name] = ("matrix", rows)
    return blocks


def _matrix(blocks, name, min_cols):
    if name not in blocks or blocks[name][0] != "matrix":
        raise CaseParseError(f"missing matrix block mpc.{name}")
    rows = blocks[name][1]
    if not rows:
        raise CaseParseError(f"empty matrix block mpc.{name}")
    width = len(rows[0][1])
    out = []
    for line_no, tokens in rows:
        if len(tokens) != width:
            raise CaseParseError(
                f"mpc.{name} row has {len(tokens)} columns, expected {width}", line_no
            )
        if len(tokens) < min_cols:
            raise CaseParseError(f"mpc.{name} needs at least {min_cols} columns", line_no)
        try:
            out.append((line_no, [float(t) for t in tokens]))
        except ValueError:
            raise CaseParseError(f"non-numeric entry in mpc.{name}", line_no) from None
    return out


def _as_int(value, what, line_no):
    if value != int(value):
        raise CaseParseError(f"{what} must be an integer, got {value}", line_no)
    return int(value)


def parse_matpower_case(text: str, name: str = "") -> GridCase:
    """Parse the DC-relevant subset of a MATPOWER case file.

    Susceptances are ``1/x``; parallel branches are merged by summing
    susceptances and branches with status 0 are dropped.
    """
    blocks = _collect_blocks(text)
    if "baseMVA" not in blocks or blocks["baseMVA"][0] != "scalar":
        raise CaseParseError("missing scalar mpc.baseMVA")
    line_no, raw = blocks["baseMVA"][1]
    try:
        base_mva = float(raw)
    except ValueError:
        raise CaseParseError(f"mpc.baseMVA is not numeric: {raw!r}", line_no) from None

    bus_rows = _matrix(blocks, "bus", 2)
    buses, slack = [], []
    for ln, row in bus_rows:
        bus_id = _as_int(row[_BUS_ID - 1], "bus id", ln)
        area = _as_int(row[_BUS_AREA - 1], "area", ln) if len(row) >= _BUS_AREA else 1
        if _as_int(row[_BUS_TYPE - 1], "bus type", ln) == _SLACK_TYPE:
            slack.append(bus_id)
        buses.append((bus_id, area))
    if not slack:
        raise CaseValidationError("no slack (type 3) bus")
    if len(slack) > 1:
        raise CaseValidationError(f"multiple slack buses {slack}")
    if len({a for _, a in buses}) == 1:
        buses = [(b, 1) for b, _ in buses]

    branches = []
    for ln, row in _matrix(blocks, "branch", _BR_X):
        if len(row) >= _BR_STATUS and row[_BR_STATUS - 1] == 0:
            continue
        f = _as_int(row[_BR_FROM - 1], "branch from-bus", ln)
        t = _as_int(row[_BR_TO - 1], "branch to-bus", ln)
        x = row[_BR_X - 1]
        if x == 0:
            raise CaseValidationError(f"branch {f}-{t} (line {ln}) has zero reactance")
        branches.append((f, t, 1.0 / x))
    return GridCase(tuple(buses), tuple(branches), slack[0], base_mva, name=name)


def to_canonical_json(case: GridCase) -> str:
    doc = {
        "base_mva": case.base_mva,
        "slack": case.slack,
        "buses": [{"id": b, "area": a} for b, a in case.buses],
        "branches": [{"from": f, "to": t, "b": b} for f, t, b in case.branches],
    }
    return json.dumps(doc, indent=2) + "\n"


def _field(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise CaseParseError(f"missing field {where}{key!r}")
    value = obj[key]
    ok = {
        "int": isinstance(value, int) and not isinstance(value, bool),
        "num": isinstance(value, (int, float)) and not isinstance(value, bool),
        "list": isinstance(value, list),
    }[kind]
    if not ok:
        raise CaseParseError(f"field {where}{key!r} has the wrong type")
    return value


def from_canonical_json(text: str) -> GridCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict):
        raise CaseParseError("top level must be an object")
    base_mva = _field(doc, "base_mva", "num", "")
    slack = _field(doc, "slack", "int", "")
    buses = []
    for k, bus in enumerate(_field(doc, "buses", "list", "")):
        where = f"buses[{k}]."
        buses.append((_field(bus, "id", "int", where), _field(bus, "area", "int", where)))
    branches = []
    for k, br in enumerate(_field(doc, "branches", "list", "")):
        where = f"branches[{k}]."
        branches.append(
            (_field(br, "from", "int", where), _field(br, "to", "int", where),
             float(_field(br, "b", "num", where)))
        )
    return GridCase(tuple(buses), tuple(branches), slack, float(base_mva))


def load_case(source: str | Path) -> GridCase:
    """Load a bundled case by name (``case14``, ``case30``) or a file path.

    ``.json`` files are read as canonical JSON, anything else as MATPOWER.
    """
    source = str(source)
    if source in BUNDLED_CASES:
        text = resources.files("gridcct.data").joinpath(f"{source}.m").read_text()
        return parse_matpower_case(text, name=source)
    path = Path(source)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        case = from_canonical_json(text)
        object.__setattr__(case, "name", path.stem)
        return case
    return parse_matpower_case(text, name=path.stem)
