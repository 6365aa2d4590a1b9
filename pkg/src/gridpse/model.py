"""In-memory grid model: buses, branches, unknown-parameter declarations."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class DataError(Exception):
    """Raised on malformed or inconsistent input data."""


class BusKind(str, enum.Enum):
    SLACK = "slack"
    GENERATOR = "generator"
    LOAD = "load"
    ZERO_INJECTION = "zero_injection"


class ParamTarget(str, enum.Enum):
    """Which network quantity an unknown-parameter entry refers to."""

    BRANCH_B = "branch_b"  # series susceptance of a branch
    BRANCH_G = "branch_g"  # series conductance of a branch
    SHUNT_B = "shunt_b"    # shunt susceptance of a bus


@dataclass(frozen=True)
class Bus:
    """A network bus. All electrical quantities in per unit on the system base.

    ``v_sched`` is the scheduled voltage magnitude and is only meaningful for
    slack and generator buses.
    """

    id: int
    kind: BusKind
    base_kv: float = 138.0
    b_shunt: float = 0.0
    v_sched: float | None = None
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0


@dataclass(frozen=True)
class Branch:
    """A series branch (line or tap-less transformer) in the pi model.

    ``g`` and ``b`` are the series admittance components; ``b_charging`` is the
    total line-charging susceptance, split half per terminal.
    """

    id: int
    from_bus: int
    to_bus: int
    g: float
    b: float
    b_charging: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Network:
    """Immutable container for a grid; safe to share across workers."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    _bus_pos: dict = field(init=False, repr=False, compare=False, hash=False)
    _branch_pos: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_bus_pos", {b.id: i for i, b in enumerate(self.buses)})
        object.__setattr__(self, "_branch_pos", {br.id: i for i, br in enumerate(self.branches)})

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus_id: int) -> int:
        try:
            return self._bus_pos[bus_id]
        except KeyError:
            raise DataError(f"unknown bus id {bus_id}") from None

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.bus_index(bus_id)]

    def branch(self, branch_id: int) -> Branch:
        try:
            return self.branches[self._branch_pos[branch_id]]
        except KeyError:
            raise DataError(f"unknown branch id {branch_id}") from None

    def slack_bus(self) -> Bus:
        slacks = [b for b in self.buses if b.kind is BusKind.SLACK]
        if len(slacks) != 1:
            raise DataError(f"expected exactly one slack bus, found {len(slacks)}")
        return slacks[0]

    def in_service_branches(self) -> tuple[Branch, ...]:
        return tuple(br for br in self.branches if br.in_service)


@dataclass(frozen=True)
class UnknownParameter:
    """One unknown or suspect network parameter.

    ``best_known`` is the database value used both as the linearization point
    of the delta formulation and to derive default bounds; ``None`` means no
    prior value is available.
    """

    target: ParamTarget
    element_id: int
    best_known: float | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.target.value, self.element_id)


@dataclass(frozen=True)
class UnknownParameterSet:
    entries: tuple[UnknownParameter, ...] = ()

    def __post_init__(self):
        keys = [e.key for e in self.entries]
        if len(set(keys)) != len(keys):
            raise DataError("duplicate unknown-parameter entry")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def sorted_entries(self) -> tuple[UnknownParameter, ...]:
        return tuple(sorted(self.entries, key=lambda e: e.key))

    def validate_against(self, network: Network) -> None:
        for e in self.entries:
            if e.target in (ParamTarget.BRANCH_B, ParamTarget.BRANCH_G):
                br = network.branch(e.element_id)
                if not br.in_service:
                    raise DataError(
                        f"unknown parameter on out-of-service branch {e.element_id}"
                    )
            else:
                network.bus(e.element_id)


def _connected(network: Network) -> bool:
    n = network.n_bus
    if n == 0:
        return True
    adj: list[list[int]] = [[] for _ in range(n)]
    for br in network.in_service_branches():
        i = network.bus_index(br.from_bus)
        j = network.bus_index(br.to_bus)
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    stack = [0]
    seen[0] = True
    while stack:
        k = stack.pop()
        for m in adj[k]:
            if not seen[m]:
                seen[m] = True
                stack.append(m)
    return all(seen)


def validate(network: Network) -> list[str]:
    """Check all model invariants; returns human-readable violations (empty if valid)."""
    violations: list[str] = []

    ids = [b.id for b in network.buses]
    if len(set(ids)) != len(ids):
        violations.append("duplicate bus id")
    n_slack = sum(1 for b in network.buses if b.kind is BusKind.SLACK)
    if n_slack == 0:
        violations.append("no slack bus")
    elif n_slack > 1:
        violations.append(f"{n_slack} slack buses, expected exactly one")
    if network.base_mva <= 0:
        violations.append("base power must be positive")

    for b in network.buses:
        if b.base_kv <= 0:
            violations.append(f"bus {b.id}: base voltage must be positive")
        if b.kind in (BusKind.SLACK, BusKind.GENERATOR):
            if b.v_sched is None or b.v_sched <= 0:
                violations.append(f"bus {b.id}: {b.kind.value} bus needs a positive scheduled voltage")
        if b.kind is BusKind.ZERO_INJECTION:
            if b.p_load != 0.0 or b.q_load != 0.0 or b.p_gen != 0.0 or b.b_shunt != 0.0:
                violations.append(f"bus {b.id}: zero-injection bus carries load, generation, or shunt")
        for v in (b.b_shunt, b.p_load, b.q_load, b.p_gen):
            if not math.isfinite(v):
                violations.append(f"bus {b.id}: non-finite data")
                break

    branch_ids = [br.id for br in network.branches]
    if len(set(branch_ids)) != len(branch_ids):
        violations.append("duplicate branch id")
    known = set(ids)
    for br in network.branches:
        if br.from_bus == br.to_bus:
            violations.append(f"branch {br.id}: from-bus equals to-bus")
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                violations.append(f"branch {br.id}: endpoint {end} does not exist")
        if br.g < 0:
            violations.append(f"branch {br.id}: negative series conductance")
        if not all(math.isfinite(v) for v in (br.g, br.b, br.b_charging)):
            violations.append(f"branch {br.id}: non-finite data")

    if not violations and not _connected(network):
        violations.append("network is not connected over in-service branches")
    return violations


def series_admittance(r: float, x: float) -> tuple[float, float]:
    """Convert series impedance r + jx to admittance g + jb."""
    d = r * r + x * x
    if d == 0.0:
        raise DataError("branch with zero series impedance")
    return r / d, -x / d
