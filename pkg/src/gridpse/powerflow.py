"""Newton-Raphson AC power flow used to generate ground-truth operating points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import BusKind, DataError, Network

# Above this size the Jacobian is factored sparse instead of dense.
SPARSE_THRESHOLD = 200


class PowerFlowError(Exception):
    """Raised when the power flow fails to converge or the Jacobian is singular."""


@dataclass(frozen=True)
class OperatingPoint:
    """Solved rectangular bus voltages plus derived polar quantities."""

    v_real: np.ndarray
    v_imag: np.ndarray
    iterations: int = 0
    max_mismatch: float = 0.0
    magnitude: np.ndarray = field(init=False, compare=False)
    angle: np.ndarray = field(init=False, compare=False)

    def __post_init__(self):
        vc = self.v_real + 1j * self.v_imag
        object.__setattr__(self, "magnitude", np.abs(vc))
        object.__setattr__(self, "angle", np.angle(vc))

    @property
    def complex_voltage(self) -> np.ndarray:
        return self.v_real + 1j * self.v_imag


def build_ybus(network: Network) -> sp.csr_matrix:
    """Nodal admittance matrix: series branches, half charging per terminal, bus shunts."""
    n = network.n_bus
    rows, cols, data = [], [], []
    for br in network.in_service_branches():
        i = network.bus_index(br.from_bus)
        j = network.bus_index(br.to_bus)
        y = br.g + 1j * br.b
        ych = 1j * br.b_charging / 2.0
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        data += [y + ych, y + ych, -y, -y]
    for idx, bus in enumerate(network.buses):
        if bus.b_shunt != 0.0:
            rows.append(idx)
            cols.append(idx)
            data.append(1j * bus.b_shunt)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n), dtype=complex)


def _scheduled_injections(network: Network) -> tuple[np.ndarray, np.ndarray]:
    p = np.array([b.p_gen - b.p_load for b in network.buses])
    q = np.array([-b.q_load for b in network.buses])
    return p, q


def solve_powerflow(
    network: Network,
    tolerance: float = 1e-10,
    max_iterations: int = 50,
    start: OperatingPoint | None = None,
) -> OperatingPoint:
    """Polar Newton-Raphson power flow from a flat (or supplied) start.

    Generator buses hold their scheduled magnitude (reactive limits ignored);
    the slack bus is fixed at its schedule with angle zero.
    """
    if tolerance <= 0:
        raise DataError("power flow tolerance must be positive")
    n = network.n_bus
    ybus = build_ybus(network)
    kinds = [b.kind for b in network.buses]
    slack = [i for i, k in enumerate(kinds) if k is BusKind.SLACK]
    if len(slack) != 1:
        raise DataError(f"expected exactly one slack bus, found {len(slack)}")
    slack = slack[0]
    pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.GENERATOR], dtype=int)
    pq = np.array(
        [i for i, k in enumerate(kinds) if k in (BusKind.LOAD, BusKind.ZERO_INJECTION)],
        dtype=int,
    )
    nonslack = np.array([i for i in range(n) if i != slack], dtype=int)

    vm = np.ones(n)
    va = np.zeros(n)
    for i, b in enumerate(network.buses):
        if b.kind in (BusKind.SLACK, BusKind.GENERATOR):
            vm[i] = b.v_sched if b.v_sched is not None else 1.0
    if start is not None:
        vm = start.magnitude.copy()
        va = start.angle.copy()
        vm[slack] = network.buses[slack].v_sched or 1.0
        va[slack] = 0.0
        vm[pv] = [network.buses[i].v_sched or 1.0 for i in pv]

    p_spec, q_spec = _scheduled_injections(network)

    def mismatch(vm, va):
        v = vm * np.exp(1j * va)
        s = v * np.conj(ybus @ v)
        dp = p_spec[nonslack] - s.real[nonslack]
        dq = q_spec[pq] - s.imag[pq]
        return np.concatenate([dp, dq]), s

    for it in range(max_iterations):
        f, s = mismatch(vm, va)
        err = np.max(np.abs(f)) if f.size else 0.0
        if err <= tolerance:
            v = vm * np.exp(1j * va)
            return OperatingPoint(v_real=v.real, v_imag=v.imag, iterations=it, max_mismatch=err)
        jac = _jacobian(ybus, vm, va, s, nonslack, pq)
        try:
            if n > SPARSE_THRESHOLD:
                dx = spla.spsolve(jac.tocsc(), f)
            else:
                dx = np.linalg.solve(jac.toarray(), f)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise PowerFlowError(f"singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError(f"singular Jacobian at iteration {it}")
        va[nonslack] += dx[: nonslack.size]
        vm[pq] += dx[nonslack.size:]

    f, _ = mismatch(vm, va)
    raise PowerFlowError(
        f"no convergence within {max_iterations} iterations "
        f"(final mismatch {np.max(np.abs(f)):.3e})"
    )


def _jacobian(ybus, vm, va, s, nonslack, pq):
    """Standard polar power flow Jacobian [[dP/dva, dP/dvm], [dQ/dva, dQ/dvm]]."""
    v = vm * np.exp(1j * va)
    ibus = ybus @ v
    diag_v = sp.diags(v)
    diag_i = sp.diags(ibus)
    diag_e = sp.diags(v / np.abs(v))
    ds_dva = (1j * diag_v @ (diag_i - ybus @ diag_v).conjugate()).tocsr()
    ds_dvm = (diag_v @ (ybus @ diag_e).conjugate() + diag_i.conjugate() @ diag_e).tocsr()
    j11 = ds_dva[nonslack, :][:, nonslack].real
    j12 = ds_dvm[nonslack, :][:, pq].real
    j21 = ds_dva[pq, :][:, nonslack].imag
    j22 = ds_dvm[pq, :][:, pq].imag
    return sp.bmat([[j11, j12], [j21, j22]], format="csr")


def bus_injections(network: Network, point: OperatingPoint) -> tuple[np.ndarray, np.ndarray]:
    """Net complex power injection at every bus, computed from the voltages."""
    ybus = build_ybus(network)
    v = point.complex_voltage
    s = v * np.conj(ybus @ v)
    return s.real, s.imag


def branch_flow(
    network: Network, point: OperatingPoint, branch_id: int, metered_end: int
) -> tuple[float, float]:
    """Complex power leaving the metered terminal into the branch.

    Includes that terminal's half of the line charging.
    """
    br = network.branch(branch_id)
    if not br.in_service:
        raise DataError(f"branch {branch_id} is out of service")
    if metered_end == br.from_bus:
        k, l = br.from_bus, br.to_bus
    elif metered_end == br.to_bus:
        k, l = br.to_bus, br.from_bus
    else:
        raise DataError(f"bus {metered_end} is not a terminal of branch {branch_id}")
    v = point.complex_voltage
    vk = v[network.bus_index(k)]
    vl = v[network.bus_index(l)]
    y = br.g + 1j * br.b
    i_fl = y * (vk - vl) + 1j * (br.b_charging / 2.0) * vk
    s = vk * np.conj(i_fl)
    return float(s.real), float(s.imag)
