"""RTU measurement types, feature transforms, and synthetic data generation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import BusKind, DataError, Network
from . import powerflow


@dataclass(frozen=True)
class InjectionMeasurement:
    """RTU triple (P, Q, |V|) measured at a bus, with estimation weights."""

    bus: int
    z_p: float
    z_q: float
    z_vm: float
    w_current: float = 1.0
    w_voltage: float = 1.0

    def __post_init__(self):
        if self.z_vm <= 0:
            raise DataError(f"bus {self.bus}: measured voltage magnitude must be positive")
        if self.w_current <= 0 or self.w_voltage <= 0:
            raise DataError(f"bus {self.bus}: measurement weights must be positive")


@dataclass(frozen=True)
class FlowMeasurement:
    """RTU flow triple (P, Q, |V|) at the metered end of a branch."""

    branch: int
    metered_end: int
    z_p: float
    z_q: float
    z_vm: float
    w_current: float = 1.0

    def __post_init__(self):
        if self.z_vm <= 0:
            raise DataError(f"branch {self.branch}: measured voltage magnitude must be positive")


@dataclass(frozen=True)
class PeriodMeasurements:
    injections: tuple[InjectionMeasurement, ...]
    flows: tuple[FlowMeasurement, ...] = ()


@dataclass(frozen=True)
class MeasurementSet:
    """Measurements for one or more operating periods sharing a grid."""

    periods: tuple[PeriodMeasurements, ...]
    zero_injection_buses: tuple[int, ...] = ()

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    def validate_against(self, network: Network) -> None:
        if self.n_periods < 1:
            raise DataError("measurement set needs at least one period")
        zi = set(self.zero_injection_buses)
        measured = {b.id for b in network.buses} - zi
        for t, period in enumerate(self.periods):
            seen = set()
            for m in period.injections:
                network.bus(m.bus)
                if m.bus in zi:
                    raise DataError(f"period {t}: injection measurement at zero-injection bus {m.bus}")
                if m.bus in seen:
                    raise DataError(f"period {t}: duplicate injection measurement at bus {m.bus}")
                seen.add(m.bus)
            if seen != measured:
                missing = sorted(measured - seen)
                raise DataError(f"period {t}: buses {missing} lack an injection measurement")
            for m in period.flows:
                br = network.branch(m.branch)
                if m.metered_end not in (br.from_bus, br.to_bus):
                    raise DataError(
                        f"period {t}: metered end {m.metered_end} is not a terminal of branch {m.branch}"
                    )


def feature_transform(z_p: float, z_q: float, z_vm: float) -> tuple[float, float]:
    """Reduce an RTU injection triple to the two equivalent admittance features.

    z_g = z_p / z_vm**2 and z_b = z_q / z_vm**2, which make the nodal current
    balance affine in the rectangular voltages.
    """
    if z_vm <= 0:
        raise DataError("voltage magnitude must be positive in the feature transform")
    m2 = z_vm * z_vm
    return z_p / m2, z_q / m2


def flow_feature_transform(z_p_fl: float, z_q_fl: float, z_vm_met: float) -> tuple[float, float]:
    """Same reduction for a flow triple, using the metered-end magnitude."""
    return feature_transform(z_p_fl, z_q_fl, z_vm_met)


def zero_injection_buses(network: Network) -> tuple[int, ...]:
    return tuple(b.id for b in network.buses if b.kind is BusKind.ZERO_INJECTION)


def synthesize(
    network: Network,
    point: powerflow.OperatingPoint,
    noise_std: float,
    seed: int,
    flow_placement: tuple[tuple[int, int], ...] = (),
    weights: dict[int, tuple[float, float]] | None = None,
) -> MeasurementSet:
    """Generate one period of noisy RTU measurements from a solved operating point.

    Injection measurements are placed at every non-zero-injection bus; flow
    measurements at the given (branch id, metered-end bus id) placements.
    Noise is added to the physical meter outputs (P, Q, |V|) as independent
    Gaussian draws of standard deviation ``noise_std``; deterministic per seed.
    """
    if noise_std < 0:
        raise DataError("noise standard deviation must be nonnegative")
    rng = np.random.default_rng(seed)
    period = _synthesize_period(network, point, noise_std, rng, flow_placement, weights)
    return MeasurementSet(
        periods=(period,), zero_injection_buses=zero_injection_buses(network)
    )


def _synthesize_period(network, point, noise_std, rng, flow_placement, weights):
    zi = set(zero_injection_buses(network))
    p_inj, q_inj = powerflow.bus_injections(network, point)
    injections = []
    for i, bus in enumerate(network.buses):
        if bus.id in zi:
            continue
        eps = rng.standard_normal(3)
        w_i, w_v = (weights or {}).get(bus.id, (1.0, 1.0))
        injections.append(
            InjectionMeasurement(
                bus=bus.id,
                z_p=p_inj[i] + noise_std * eps[0],
                z_q=q_inj[i] + noise_std * eps[1],
                z_vm=point.magnitude[i] + noise_std * eps[2],
                w_current=w_i,
                w_voltage=w_v,
            )
        )
    flows = []
    for branch_id, end in flow_placement:
        br = network.branch(branch_id)
        if not br.in_service:
            raise DataError(f"flow measurement on out-of-service branch {branch_id}")
        p_fl, q_fl = powerflow.branch_flow(network, point, branch_id, end)
        eps = rng.standard_normal(3)
        flows.append(
            FlowMeasurement(
                branch=branch_id,
                metered_end=end,
                z_p=p_fl + noise_std * eps[0],
                z_q=q_fl + noise_std * eps[1],
                z_vm=point.magnitude[network.bus_index(end)] + noise_std * eps[2],
            )
        )
    return PeriodMeasurements(injections=tuple(injections), flows=tuple(flows))


def scale_loads(network: Network, factor: float) -> Network:
    """Return a copy of the network with all bus loads scaled by ``factor``."""
    if factor <= 0:
        raise DataError("load scale factor must be positive")
    buses = tuple(
        replace(b, p_load=b.p_load * factor, q_load=b.q_load * factor) for b in network.buses
    )
    return Network(buses=buses, branches=network.branches, base_mva=network.base_mva)


def build_multi_period(
    network: Network,
    load_scales: tuple[float, ...],
    noise_std: float,
    seed: int,
    flow_placement: tuple[tuple[int, int], ...] = (),
    weights: dict[int, tuple[float, float]] | None = None,
    pf_tolerance: float = 1e-10,
) -> MeasurementSet:
    """Synthesize one measurement period per load-scale factor.

    Each period's truth comes from a power flow at the scaled loading; the
    noise stream is drawn sequentially from a single seeded generator so that
    periods get distinct draws deterministically.
    """
    if not load_scales:
        raise DataError("need at least one load-scale factor")
    rng = np.random.default_rng(seed)
    periods = []
    for t, factor in enumerate(load_scales):
        scaled = scale_loads(network, factor)
        try:
            point = powerflow.solve_powerflow(scaled, tolerance=pf_tolerance)
        except powerflow.PowerFlowError as exc:
            raise powerflow.PowerFlowError(
                f"power flow diverged for period {t} (load scale {factor}): {exc}"
            ) from exc
        periods.append(
            _synthesize_period(scaled, point, noise_std, rng, flow_placement, weights)
        )
    return MeasurementSet(
        periods=tuple(periods), zero_injection_buses=zero_injection_buses(network)
    )
