"""Case file input/output: MATPOWER-style tables and the native JSON case format."""

from __future__ import annotations

import importlib.resources
import json
import re
from pathlib import Path

from .measurement import (
    FlowMeasurement,
    InjectionMeasurement,
    MeasurementSet,
    PeriodMeasurements,
)
from .model import (
    Branch,
    Bus,
    BusKind,
    DataError,
    Network,
    ParamTarget,
    UnknownParameter,
    UnknownParameterSet,
    series_admittance,
    validate,
)

NATIVE_FORMAT = "gridpse-case/1"

_DEFAULT_BASE_KV = 138.0


def _matpower_tables(text: str) -> dict[str, tuple[list[list[float]], list[int]]]:
    """Extract numeric matrices mpc.<name> = [...] with per-row source line numbers."""
    tables: dict[str, tuple[list[list[float]], list[int]]] = {}
    lines = text.splitlines()
    name = None
    rows: list[list[float]] = []
    lineno: list[int] = []
    header = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[")
    for i, raw in enumerate(lines, start=1):
        line = raw.split("%", 1)[0].strip()
        if name is None:
            m = header.match(line)
            if m and "]" not in line:
                name = m.group(1)
            continue
        if line.startswith("]"):
            tables[name] = (rows, lineno)
            name, rows, lineno = None, [], []
            continue
        if not line:
            continue
        body = line.rstrip(";")
        try:
            rows.append([float(tok) for tok in body.split()])
        except ValueError:
            raise DataError(f"line {i}: malformed table row in mpc.{name}") from None
        lineno.append(i)
    return tables


def _matpower_scalar(text: str, key: str) -> float | None:
    m = re.search(rf"mpc\.{key}\s*=\s*([0-9eE+.\-]+)\s*;", text)
    return float(m.group(1)) if m else None


def parse_matpower_subset(text: str) -> Network:
    """Parse the common open case table format (bus/gen/branch matrices).

    Impedances are converted to series admittances, loads and shunts to per
    unit on the declared base, and buses with no load, generation, or shunt
    are flagged zero-injection. Transformer tap and phase-shift columns are
    ignored (branches are modeled as series admittance plus charging).
    """
    base_mva = _matpower_scalar(text, "baseMVA")
    if base_mva is None or base_mva <= 0:
        raise DataError("missing or invalid mpc.baseMVA")
    tables = _matpower_tables(text)
    for required in ("bus", "gen", "branch"):
        if required not in tables:
            raise DataError(f"missing mpc.{required} table")

    gen_rows, gen_lines = tables["gen"]
    gen_p: dict[int, float] = {}
    gen_v: dict[int, float] = {}
    for row, ln in zip(gen_rows, gen_lines):
        if len(row) < 8:
            raise DataError(f"line {ln}: generator row needs at least 8 columns")
        bus_id, pg, vg, status = int(row[0]), row[1], row[5], row[7]
        if status <= 0:
            continue
        gen_p[bus_id] = gen_p.get(bus_id, 0.0) + pg / base_mva
        gen_v.setdefault(bus_id, vg)

    bus_rows, bus_lines = tables["bus"]
    buses = []
    seen_ids = set()
    for row, ln in zip(bus_rows, bus_lines):
        if len(row) < 9:
            raise DataError(f"line {ln}: bus row needs at least 9 columns")
        bus_id, bus_type = int(row[0]), int(row[1])
        if bus_id in seen_ids:
            raise DataError(f"line {ln}: duplicate bus id {bus_id}")
        seen_ids.add(bus_id)
        pd, qd, gs, bs = row[2] / base_mva, row[3] / base_mva, row[4], row[5]
        if gs != 0.0:
            raise DataError(f"line {ln}: bus shunt conductance is not supported")
        base_kv = row[9] if len(row) > 9 and row[9] > 0 else _DEFAULT_BASE_KV
        has_gen = bus_id in gen_p
        if bus_type == 3:
            kind = BusKind.SLACK
        elif bus_type == 2 and has_gen:
            kind = BusKind.GENERATOR
        elif pd == 0.0 and qd == 0.0 and bs == 0.0 and not has_gen:
            kind = BusKind.ZERO_INJECTION
        else:
            kind = BusKind.LOAD
        buses.append(
            Bus(
                id=bus_id,
                kind=kind,
                base_kv=base_kv,
                b_shunt=bs / base_mva,
                v_sched=gen_v.get(bus_id)
                if kind in (BusKind.SLACK, BusKind.GENERATOR)
                else None,
                p_load=pd,
                q_load=qd,
                p_gen=gen_p.get(bus_id, 0.0),
            )
        )

    branch_rows, branch_lines = tables["branch"]
    branches = []
    for idx, (row, ln) in enumerate(zip(branch_rows, branch_lines), start=1):
        if len(row) < 5:
            raise DataError(f"line {ln}: branch row needs at least 5 columns")
        try:
            g, b = series_admittance(row[2], row[3])
        except DataError as exc:
            raise DataError(f"line {ln}: {exc}") from None
        status = row[10] if len(row) > 10 else 1.0
        branches.append(
            Branch(
                id=idx,
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                g=g,
                b=b,
                b_charging=row[4],
                in_service=status > 0,
            )
        )

    network = Network(buses=tuple(buses), branches=tuple(branches), base_mva=base_mva)
    violations = validate(network)
    if violations:
        raise DataError("invalid network: " + "; ".join(violations))
    return network


# ---------------------------------------------------------------------------
# Native case format (JSON)
# ---------------------------------------------------------------------------

def _bus_to_dict(b: Bus) -> dict:
    return {
        "id": b.id,
        "kind": b.kind.value,
        "base_kv": b.base_kv,
        "b_shunt": b.b_shunt,
        "v_sched": b.v_sched,
        "p_load": b.p_load,
        "q_load": b.q_load,
        "p_gen": b.p_gen,
    }


def _branch_to_dict(br: Branch) -> dict:
    return {
        "id": br.id,
        "from": br.from_bus,
        "to": br.to_bus,
        "g": br.g,
        "b": br.b,
        "b_charging": br.b_charging,
        "in_service": br.in_service,
    }


def serialize_native_case(
    network: Network,
    unknowns: UnknownParameterSet | None = None,
    measurements: MeasurementSet | None = None,
) -> str:
    doc: dict = {
        "format": NATIVE_FORMAT,
        "network": {
            "base_mva": network.base_mva,
            "buses": [_bus_to_dict(b) for b in network.buses],
            "branches": [_branch_to_dict(br) for br in network.branches],
        },
        "unknown_parameters": [
            {"target": e.target.value, "id": e.element_id, "best_known": e.best_known}
            for e in (unknowns.entries if unknowns else ())
        ],
    }
    if measurements is not None:
        doc["measurements"] = {
            "zero_injection_buses": list(measurements.zero_injection_buses),
            "periods": [
                {
                    "injections": [
                        {
                            "bus": m.bus,
                            "z_p": m.z_p,
                            "z_q": m.z_q,
                            "z_vm": m.z_vm,
                            "w_current": m.w_current,
                            "w_voltage": m.w_voltage,
                        }
                        for m in period.injections
                    ],
                    "flows": [
                        {
                            "branch": m.branch,
                            "metered_end": m.metered_end,
                            "z_p": m.z_p,
                            "z_q": m.z_q,
                            "z_vm": m.z_vm,
                            "w_current": m.w_current,
                        }
                        for m in period.flows
                    ],
                }
                for period in measurements.periods
            ],
        }
    return json.dumps(doc, indent=2)


def _require(obj: dict, key: str, context: str):
    if key not in obj:
        raise DataError(f"{context}: missing field '{key}'")
    return obj[key]


def parse_native_case(
    text: str,
) -> tuple[Network, UnknownParameterSet, MeasurementSet | None]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != NATIVE_FORMAT:
        raise DataError(f"expected a '{NATIVE_FORMAT}' document")
    net_doc = _require(doc, "network", "case")
    buses = []
    for bd in _require(net_doc, "buses", "network"):
        try:
            kind = BusKind(bd["kind"])
        except (KeyError, ValueError):
            raise DataError(f"bus {bd.get('id')}: invalid kind") from None
        buses.append(
            Bus(
                id=int(_require(bd, "id", "bus")),
                kind=kind,
                base_kv=float(bd.get("base_kv", _DEFAULT_BASE_KV)),
                b_shunt=float(bd.get("b_shunt", 0.0)),
                v_sched=None if bd.get("v_sched") is None else float(bd["v_sched"]),
                p_load=float(bd.get("p_load", 0.0)),
                q_load=float(bd.get("q_load", 0.0)),
                p_gen=float(bd.get("p_gen", 0.0)),
            )
        )
    branches = []
    for rd in _require(net_doc, "branches", "network"):
        branches.append(
            Branch(
                id=int(_require(rd, "id", "branch")),
                from_bus=int(_require(rd, "from", "branch")),
                to_bus=int(_require(rd, "to", "branch")),
                g=float(_require(rd, "g", "branch")),
                b=float(_require(rd, "b", "branch")),
                b_charging=float(rd.get("b_charging", 0.0)),
                in_service=bool(rd.get("in_service", True)),
            )
        )
    network = Network(
        buses=tuple(buses),
        branches=tuple(branches),
        base_mva=float(net_doc.get("base_mva", 100.0)),
    )
    violations = validate(network)
    if violations:
        raise DataError("invalid network: " + "; ".join(violations))

    entries = []
    for ud in doc.get("unknown_parameters", []):
        try:
            target = ParamTarget(ud["target"])
        except (KeyError, ValueError):
            raise DataError("unknown-parameter entry: invalid target") from None
        entries.append(
            UnknownParameter(
                target=target,
                element_id=int(_require(ud, "id", "unknown parameter")),
                best_known=None if ud.get("best_known") is None else float(ud["best_known"]),
            )
        )
    unknowns = UnknownParameterSet(entries=tuple(entries))
    unknowns.validate_against(network)

    measurements = None
    if "measurements" in doc and doc["measurements"] is not None:
        md = doc["measurements"]
        periods = []
        for pd_ in _require(md, "periods", "measurements"):
            injections = tuple(
                InjectionMeasurement(
                    bus=int(m["bus"]),
                    z_p=float(m["z_p"]),
                    z_q=float(m["z_q"]),
                    z_vm=float(m["z_vm"]),
                    w_current=float(m.get("w_current", 1.0)),
                    w_voltage=float(m.get("w_voltage", 1.0)),
                )
                for m in pd_.get("injections", [])
            )
            flows = tuple(
                FlowMeasurement(
                    branch=int(m["branch"]),
                    metered_end=int(m["metered_end"]),
                    z_p=float(m["z_p"]),
                    z_q=float(m["z_q"]),
                    z_vm=float(m["z_vm"]),
                    w_current=float(m.get("w_current", 1.0)),
                )
                for m in pd_.get("flows", [])
            )
            periods.append(PeriodMeasurements(injections=injections, flows=flows))
        measurements = MeasurementSet(
            periods=tuple(periods),
            zero_injection_buses=tuple(int(b) for b in md.get("zero_injection_buses", [])),
        )
        measurements.validate_against(network)
    return network, unknowns, measurements


def load_case(path: str | Path) -> tuple[Network, UnknownParameterSet, MeasurementSet | None]:
    """Load a case from disk; dispatches on extension (.m tables or .json native)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read case file {path}: {exc}") from None
    if path.suffix == ".m":
        return parse_matpower_subset(text), UnknownParameterSet(), None
    return parse_native_case(text)


def packaged_case(name: str) -> Network:
    """Load one of the case files shipped with the package (e.g. 'ieee14')."""
    ref = importlib.resources.files("gridpse") / "cases" / f"{name}.m"
    try:
        text = ref.read_text()
    except FileNotFoundError:
        raise DataError(f"no packaged case named '{name}'") from None
    return parse_matpower_subset(text)
