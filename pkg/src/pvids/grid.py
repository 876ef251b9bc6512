"""Radial distribution network model and CSV case loader."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

BUS_KINDS = ("substation", "load", "pv", "passive")
BRANCH_STATUS = ("closed", "open")

BUS_HEADER = ["id", "kind", "base_kv"]
BRANCH_HEADER = ["id", "from", "to", "r_ohm", "x_ohm", "status"]
PV_HEADER = ["bus", "p_rated_kw"]


class NetworkError(ValueError):
    """Raised for malformed or invalid network case files."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    base_kv: float


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    status: str = "closed"

    @property
    def closed(self) -> bool:
        return self.status == "closed"


@dataclass(frozen=True)
class PvPlacement:
    bus_id: int
    p_rated: float


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_kv: float = 12.66
    base_mva: float = 10.0
    _order: tuple = field(default=(), repr=False, compare=False)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def z_base(self) -> float:
        return self.base_kv**2 / self.base_mva

    def bus_ids(self, kind: str | None = None) -> list[int]:
        return [b.id for b in self.buses if kind is None or b.kind == kind]

    def closed_branches(self) -> list[Branch]:
        return [br for br in self.branches if br.closed]

    def with_status(self, statuses: dict[int, str]) -> "NetworkModel":
        """Copy of the model with some branch statuses changed (re-validated)."""
        branches = tuple(
            Branch(br.id, br.from_bus, br.to_bus, br.r, br.x, statuses.get(br.id, br.status))
            for br in self.branches
        )
        return build_network(self.buses, branches, self.base_kv, self.base_mva)


def _tree_order(buses, branches):
    root = [b.id for b in buses if b.kind == "substation"][0]
    adj: dict[int, list[tuple[Branch, int]]] = {b.id: [] for b in buses}
    for br in branches:
        if br.closed:
            adj[br.from_bus].append((br, br.to_bus))
            adj[br.to_bus].append((br, br.from_bus))
    order = []
    seen = {root}
    queue = deque([root])
    while queue:
        parent = queue.popleft()
        for br, child in adj[parent]:
            if child in seen:
                continue
            seen.add(child)
            order.append((br, parent, child))
            queue.append(child)
    return order, seen


def build_network(buses, branches, base_kv=12.66, base_mva=10.0) -> NetworkModel:
    """Validate buses/branches and return an immutable :class:`NetworkModel`."""
    buses = tuple(sorted(buses, key=lambda b: b.id))
    branches = tuple(sorted(branches, key=lambda b: b.id))
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate bus id")
    if ids != list(range(1, len(ids) + 1)):
        raise NetworkError("bus ids must be contiguous 1..N")
    for b in buses:
        if b.kind not in BUS_KINDS:
            raise NetworkError(f"bus {b.id}: unknown kind {b.kind!r}")
    subs = [b.id for b in buses if b.kind == "substation"]
    if subs != [1]:
        raise NetworkError("exactly one substation bus (id 1) required")
    br_ids = [br.id for br in branches]
    if len(set(br_ids)) != len(br_ids):
        raise NetworkError("duplicate branch id")
    idset = set(ids)
    for br in branches:
        if br.from_bus not in idset or br.to_bus not in idset:
            raise NetworkError(f"branch {br.id}: dangling endpoint")
        if br.from_bus == br.to_bus:
            raise NetworkError(f"branch {br.id}: self loop")
        if br.r < 0 or br.x < 0:
            raise NetworkError(f"branch {br.id}: negative impedance")
        if br.status not in BRANCH_STATUS:
            raise NetworkError(f"branch {br.id}: unknown status {br.status!r}")
    n_closed = sum(br.closed for br in branches)
    order, reached = _tree_order(buses, branches)
    if n_closed != len(order):
        raise NetworkError("non-radial: closed branches contain a cycle")
    if len(reached) != len(buses):
        raise NetworkError("non-radial: buses unreachable from substation")
    return NetworkModel(buses, branches, base_kv, base_mva, tuple(order))


def radial_order(model: NetworkModel) -> list[tuple[Branch, int, int]]:
    """Closed branches in BFS order from the substation as (branch, parent, child)."""
    return list(model._order)


def _rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise NetworkError(f"{path}: empty file") from None
        if [h.strip() for h in head] != header:
            raise NetworkError(f"{path}: expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise NetworkError(f"{path}:{lineno}: expected {len(header)} fields")
            yield lineno, [c.strip() for c in row]


def load_network(bus_file, branch_file, base_mva: float = 10.0) -> NetworkModel:
    buses, branches = [], []
    lineno = 1
    try:
        for lineno, (i, kind, kv) in _rows(bus_file, BUS_HEADER):
            buses.append(Bus(int(i), kind, float(kv)))
        for lineno, (i, f, t, r, x, st) in _rows(branch_file, BRANCH_HEADER):
            branches.append(Branch(int(i), int(f), int(t), float(r), float(x), st))
    except ValueError as exc:
        if isinstance(exc, NetworkError):
            raise
        raise NetworkError(f"parse error at line {lineno}: {exc}") from None
    if not buses:
        raise NetworkError("no buses")
    return build_network(buses, branches, buses[0].base_kv, base_mva)


def save_network(model: NetworkModel, bus_file, branch_file) -> None:
    with open(bus_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BUS_HEADER)
        for b in model.buses:
            w.writerow([b.id, b.kind, repr(b.base_kv)])
    with open(branch_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BRANCH_HEADER)
        for br in model.branches:
            w.writerow([br.id, br.from_bus, br.to_bus, repr(br.r), repr(br.x), br.status])


def load_pv_placements(path) -> list[PvPlacement]:
    out = []
    for lineno, (bus, p) in _rows(path, PV_HEADER):
        try:
            out.append(PvPlacement(int(bus), float(p)))
        except ValueError as exc:
            raise NetworkError(f"{path}:{lineno}: {exc}") from None
    return out


def _data(name: str) -> Path:
    return Path(str(resources.files("pvids") / "data" / name))


def default_network(base_mva: float = 10.0) -> NetworkModel:
    """The bundled 69-bus, 12.66 kV feeder (branches 69-73 open)."""
    return load_network(_data("case69_bus.csv"), _data("case69_branch.csv"), base_mva)


def default_pv_placements() -> list[PvPlacement]:
    return load_pv_placements(_data("pv_default.csv"))


def nominal_loads() -> dict[int, tuple[float, float]]:
    """Baran-Wu spot loads in kW/kvar keyed by bus id."""
    out = {}
    with open(_data("case69_loads.csv"), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[int(row["bus"])] = (float(row["p_kw"]), float(row["q_kvar"]))
    return out


def nominal_injections(model: NetworkModel | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Injection vectors (kW, kvar; loads negative) for full Baran-Wu loading, no PV."""
    loads = nominal_loads()
    n = model.n_bus if model is not None else len(loads)
    p = np.zeros(n)
    q = np.zeros(n)
    for bus, (pl, ql) in loads.items():
        p[bus - 1] = -pl
        q[bus - 1] = -ql
    return p, q
