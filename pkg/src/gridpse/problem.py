"""Assembly of estimation problems over an indexed variable space.

State estimation with known parameters is an affine-constrained least-squares
problem in rectangular voltages and noise terms. Declaring parameters unknown
turns branch-current terms into bilinear products of a voltage variable and a
parameter variable; every such product (and every square arising from the
voltage-magnitude constraints) is lifted into an auxiliary variable ``s`` so
that all constraint rows stay affine over the extended space. The defining
equalities ``s = x_i * x_j`` are kept in a separate definitions list: the
exact solver enforces them, the relaxation replaces them with envelopes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .measurement import MeasurementSet, feature_transform, flow_feature_transform
from .model import (
    BusKind,
    DataError,
    Network,
    ParamTarget,
    UnknownParameterSet,
    validate,
)

ROW_RTU_KCL = "rtu-kcl"
ROW_FLOW = "flow"
ROW_ZERO_INJECTION = "zero-injection"
ROW_VMAG = "vmag"
ROW_REFERENCE = "reference"


@dataclass(frozen=True)
class RowTag:
    kind: str
    period: int
    element: int
    part: str | None = None


@dataclass(frozen=True)
class LiftDef:
    """Lifted variable ``s`` standing in for the product x[i] * x[j]."""

    s: int
    i: int
    j: int

    @property
    def is_square(self) -> bool:
        return self.i == self.j


@dataclass(frozen=True, eq=False)
class VariableSpace:
    """Index layout: per-period states and noises, shared parameters, lifted products."""

    n: int
    n_periods: int
    n_bus: int
    vr: np.ndarray          # (n_periods, n_bus) variable indices
    vi: np.ndarray          # (n_periods, n_bus)
    inj_noise: tuple        # per period: tuple of (bus_id, nr, ni, nvm or -1)
    flow_noise: tuple       # per period: tuple of (branch_id, metered_end, nr, ni)
    param_keys: tuple       # ((target, element_id), ...) canonical order
    param_offset: int
    lifts: tuple            # (LiftDef, ...)
    names: tuple

    @property
    def n_params(self) -> int:
        return len(self.param_keys)

    def param_index(self, target: str, element_id: int) -> int:
        return self.param_offset + self.param_keys.index((target, element_id))

    def lift_indices(self) -> np.ndarray:
        return np.array([d.s for d in self.lifts], dtype=int)


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """Affine rows over the extended (lifted) variable space."""

    a: sp.csr_matrix
    const: np.ndarray
    tags: tuple

    @property
    def m(self) -> int:
        return self.a.shape[0]

    def rows_tagged(self, kind: str) -> list[int]:
        return [r for r, t in enumerate(self.tags) if t.kind == kind]

    def lift_coefficients(self, row: int, lift_indices: np.ndarray) -> list[tuple[float, int]]:
        """The (coefficient, lifted-variable index) pairs of one row."""
        lift_set = set(int(i) for i in lift_indices)
        start, end = self.a.indptr[row], self.a.indptr[row + 1]
        return [
            (float(self.a.data[k]), int(self.a.indices[k]))
            for k in range(start, end)
            if int(self.a.indices[k]) in lift_set
        ]


@dataclass(frozen=True, eq=False)
class EstimationProblem:
    space: VariableSpace
    system: ConstraintSystem
    weights: np.ndarray          # diagonal objective weights (nonzero on noise vars)
    lifts: tuple                 # same as space.lifts
    lower: np.ndarray            # default box bounds used by the relaxation
    upper: np.ndarray
    network: Network
    measurements: MeasurementSet
    unknowns: UnknownParameterSet
    delta_form: bool = False
    param_reference: np.ndarray = field(default_factory=lambda: np.zeros(0))
    include_vmag: bool = True

    @property
    def n(self) -> int:
        return self.space.n

    def physical_parameters(self, x: np.ndarray) -> np.ndarray:
        """Parameter estimates in physical units (adds the reference in delta form)."""
        p = x[self.space.param_offset : self.space.param_offset + self.space.n_params]
        return p + self.param_reference if self.delta_form else p.copy()


@dataclass(frozen=True)
class PseOptions:
    include_vmag: bool = True
    delta_form: bool = False
    angle_reference: bool = True
    vm_lo: float = 0.90
    vm_hi: float = 1.10
    angle_max_deg: float = 30.0
    noise_vm_bound: float = 0.05
    param_bound_factor: float = 10.0


def _param_reference_value(network: Network, target: str, element_id: int,
                           best_known: float | None) -> float:
    if best_known is not None:
        return best_known
    if target == ParamTarget.BRANCH_B.value:
        return network.branch(element_id).b
    if target == ParamTarget.BRANCH_G.value:
        return network.branch(element_id).g
    return network.bus(element_id).b_shunt


def default_parameter_box(reference: float, factor: float) -> tuple[float, float]:
    """Wide sign-respecting bounds around a best-known magnitude.

    Susceptances keep their physical sign: a negative reference gives
    [factor * ref, 0], a positive one [0, factor * ref]. A zero reference
    falls back to a symmetric interval.
    """
    if reference < 0:
        return factor * reference, 0.0
    if reference > 0:
        return 0.0, factor * reference
    return -factor, factor


def rectangular_voltage_box(vm_lo: float, vm_hi: float, angle_max_deg: float
                            ) -> tuple[float, float, float, float]:
    """Conservative rectangle containing the polar region |V| in [lo, hi], |angle| <= max."""
    a = np.deg2rad(angle_max_deg)
    return vm_lo * np.cos(a), vm_hi, -vm_hi * np.sin(a), vm_hi * np.sin(a)


class _Builder:
    def __init__(self):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.const: list[float] = []
        self.tags: list[RowTag] = []

    def new_row(self, tag: RowTag, const: float = 0.0) -> int:
        self.const.append(const)
        self.tags.append(tag)
        return len(self.const) - 1

    def add(self, row: int, col: int, coef: float) -> None:
        if coef != 0.0:
            self.rows.append(row)
            self.cols.append(col)
            self.vals.append(coef)

    def finish(self, n: int) -> ConstraintSystem:
        a = sp.coo_matrix(
            (self.vals, (self.rows, self.cols)), shape=(len(self.const), n)
        ).tocsr()
        a.sum_duplicates()
        return ConstraintSystem(a=a, const=np.array(self.const), tags=tuple(self.tags))


def _build(network: Network, measurements: MeasurementSet,
           unknowns: UnknownParameterSet, options: PseOptions) -> EstimationProblem:
    violations = validate(network)
    if violations:
        raise DataError("invalid network: " + "; ".join(violations))
    measurements.validate_against(network)
    unknowns.validate_against(network)
    zi_net = {b.id for b in network.buses if b.kind is BusKind.ZERO_INJECTION}
    if set(measurements.zero_injection_buses) != zi_net:
        raise DataError("measurement zero-injection set does not match the network")

    n_periods = measurements.n_periods
    n_bus = network.n_bus
    slack_pos = network.bus_index(network.slack_bus().id)
    measured = [b for b in network.buses if b.id not in zi_net]
    params = unknowns.sorted_entries()
    include_vmag = options.include_vmag

    # ---- index layout ------------------------------------------------------
    names: list[str] = []
    vr = np.zeros((n_periods, n_bus), dtype=int)
    vi = np.zeros((n_periods, n_bus), dtype=int)
    inj_noise = []
    flow_noise = []
    idx = 0
    for t in range(n_periods):
        for p, bus in enumerate(network.buses):
            vr[t, p] = idx
            names.append(f"vr[t{t},{bus.id}]")
            idx += 1
        for p, bus in enumerate(network.buses):
            vi[t, p] = idx
            names.append(f"vi[t{t},{bus.id}]")
            idx += 1
        per_inj = []
        for bus in measured:
            nr, ni = idx, idx + 1
            names += [f"nr[t{t},{bus.id}]", f"ni[t{t},{bus.id}]"]
            idx += 2
            nvm = -1
            if include_vmag:
                nvm = idx
                names.append(f"nvm[t{t},{bus.id}]")
                idx += 1
            per_inj.append((bus.id, nr, ni, nvm))
        inj_noise.append(tuple(per_inj))
        per_flow = []
        for f, m in enumerate(measurements.periods[t].flows):
            per_flow.append((m.branch, m.metered_end, idx, idx + 1))
            names += [f"nfr[t{t},e{f}]", f"nfi[t{t},e{f}]"]
            idx += 2
        flow_noise.append(tuple(per_flow))

    param_offset = idx
    param_keys = tuple(e.key for e in params)
    param_ref = np.array([
        _param_reference_value(network, e.target.value, e.element_id, e.best_known)
        for e in params
    ])
    for e in params:
        names.append(f"param[{e.target.value},{e.element_id}]")
        idx += 1

    lifts: list[LiftDef] = []
    lift_of: dict[tuple[int, int], int] = {}
    lifts_frozen = False

    def get_lift(i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        s = lift_of.get(key)
        if s is None:
            if lifts_frozen:
                raise AssertionError(f"product {key} not enumerated up front")
            nonlocal idx
            s = idx
            idx += 1
            lift_of[key] = s
            lifts.append(LiftDef(s=s, i=key[0], j=key[1]))
            names.append(f"s[{names[key[0]]}*{names[key[1]]}]")
        return s

    for t in range(n_periods):
        for p_idx, e in enumerate(params):
            pcol = param_offset + p_idx
            if e.target in (ParamTarget.BRANCH_B, ParamTarget.BRANCH_G):
                br = network.branch(e.element_id)
                for end in (br.from_bus, br.to_bus):
                    pos = network.bus_index(end)
                    get_lift(pcol, int(vr[t, pos]))
                    get_lift(pcol, int(vi[t, pos]))
            else:
                pos = network.bus_index(e.element_id)
                get_lift(pcol, int(vr[t, pos]))
                get_lift(pcol, int(vi[t, pos]))
        if include_vmag:
            for (bus_id, _, _, nvm) in inj_noise[t]:
                pos = network.bus_index(bus_id)
                get_lift(int(vr[t, pos]), int(vr[t, pos]))
                get_lift(int(vi[t, pos]), int(vi[t, pos]))
                get_lift(nvm, nvm)

    n_total = idx
    lifts_frozen = True

    # ---- rows --------------------------------------------------------------
    unknown_b = {e.element_id: i for i, e in enumerate(params) if e.target is ParamTarget.BRANCH_B}
    unknown_g = {e.element_id: i for i, e in enumerate(params) if e.target is ParamTarget.BRANCH_G}
    unknown_sh = {e.element_id: i for i, e in enumerate(params) if e.target is ParamTarget.SHUNT_B}
    delta = options.delta_form
    if delta and any(e.best_known is None for e in params):
        missing = [e.key for e in params if e.best_known is None]
        raise DataError(f"delta form requires a best-known value for {missing}")

    bld = _Builder()

    by_bus: dict[int, list] = {b.id: [] for b in network.buses}
    for br in network.in_service_branches():
        by_bus[br.from_bus].append((br, br.to_bus))
        by_bus[br.to_bus].append((br, br.from_bus))

    def add_series_terms(row_r: int, row_i: int, t: int, br, k_id: int, l_id: int) -> None:
        """Current from bus k into branch (k, l): (G + jB)(V_k - V_l)."""
        kp = network.bus_index(k_id)
        lp = network.bus_index(l_id)
        p_g = unknown_g.get(br.id)
        p_b = unknown_b.get(br.id)
        g_aff = br.g if p_g is None else (param_ref[p_g] if delta else 0.0)
        b_aff = br.b if p_b is None else (param_ref[p_b] if delta else 0.0)
        # real: g (vr_k - vr_l) - b (vi_k - vi_l); imag: g (vi_k - vi_l) + b (vr_k - vr_l)
        bld.add(row_r, int(vr[t, kp]), g_aff)
        bld.add(row_r, int(vr[t, lp]), -g_aff)
        bld.add(row_r, int(vi[t, kp]), -b_aff)
        bld.add(row_r, int(vi[t, lp]), b_aff)
        bld.add(row_i, int(vi[t, kp]), g_aff)
        bld.add(row_i, int(vi[t, lp]), -g_aff)
        bld.add(row_i, int(vr[t, kp]), b_aff)
        bld.add(row_i, int(vr[t, lp]), -b_aff)
        if p_g is not None:
            pcol = param_offset + p_g
            bld.add(row_r, get_lift(pcol, int(vr[t, kp])), 1.0)
            bld.add(row_r, get_lift(pcol, int(vr[t, lp])), -1.0)
            bld.add(row_i, get_lift(pcol, int(vi[t, kp])), 1.0)
            bld.add(row_i, get_lift(pcol, int(vi[t, lp])), -1.0)
        if p_b is not None:
            pcol = param_offset + p_b
            bld.add(row_r, get_lift(pcol, int(vi[t, kp])), -1.0)
            bld.add(row_r, get_lift(pcol, int(vi[t, lp])), 1.0)
            bld.add(row_i, get_lift(pcol, int(vr[t, kp])), 1.0)
            bld.add(row_i, get_lift(pcol, int(vr[t, lp])), -1.0)

    def add_charging_terms(row_r: int, row_i: int, t: int, br, k_id: int) -> None:
        """Half the line charging at terminal k: j (b_c / 2) V_k."""
        kp = network.bus_index(k_id)
        half = br.b_charging / 2.0
        bld.add(row_r, int(vi[t, kp]), -half)
        bld.add(row_i, int(vr[t, kp]), half)

    for t in range(n_periods):
        period = measurements.periods[t]
        inj_by_bus = {m.bus: m for m in period.injections}
        nvm_by_bus = {bus_id: nvm for (bus_id, _, _, nvm) in inj_noise[t]}
        noise_by_bus = {bus_id: (nr, ni) for (bus_id, nr, ni, _) in inj_noise[t]}

        for bus in network.buses:
            is_zi = bus.id in zi_net
            kind = ROW_ZERO_INJECTION if is_zi else ROW_RTU_KCL
            row_r = bld.new_row(RowTag(kind, t, bus.id, "r"))
            row_i = bld.new_row(RowTag(kind, t, bus.id, "i"))
            pos = network.bus_index(bus.id)
            for br, other in by_bus[bus.id]:
                add_series_terms(row_r, row_i, t, br, bus.id, other)
                add_charging_terms(row_r, row_i, t, br, bus.id)
            # bus shunt current j B_sh V
            p_sh = unknown_sh.get(bus.id)
            b_sh_aff = bus.b_shunt if p_sh is None else (param_ref[p_sh] if delta else 0.0)
            bld.add(row_r, int(vi[t, pos]), -b_sh_aff)
            bld.add(row_i, int(vr[t, pos]), b_sh_aff)
            if p_sh is not None:
                pcol = param_offset + p_sh
                bld.add(row_r, get_lift(pcol, int(vi[t, pos])), -1.0)
                bld.add(row_i, get_lift(pcol, int(vr[t, pos])), 1.0)
            if not is_zi:
                m = inj_by_bus[bus.id]
                z_g, z_b = feature_transform(m.z_p, m.z_q, m.z_vm)
                # measurement element draws (z_g - j z_b) V
                bld.add(row_r, int(vr[t, pos]), -z_g)
                bld.add(row_r, int(vi[t, pos]), -z_b)
                bld.add(row_i, int(vi[t, pos]), -z_g)
                bld.add(row_i, int(vr[t, pos]), z_b)
                nr, ni = noise_by_bus[bus.id]
                bld.add(row_r, nr, -1.0)
                bld.add(row_i, ni, -1.0)

        for f, m in enumerate(period.flows):
            br = network.branch(m.branch)
            k_id = m.metered_end
            l_id = br.to_bus if k_id == br.from_bus else br.from_bus
            row_r = bld.new_row(RowTag(ROW_FLOW, t, f, "r"))
            row_i = bld.new_row(RowTag(ROW_FLOW, t, f, "i"))
            add_series_terms(row_r, row_i, t, br, k_id, l_id)
            add_charging_terms(row_r, row_i, t, br, k_id)
            z_g, z_b = flow_feature_transform(m.z_p, m.z_q, m.z_vm)
            kp = network.bus_index(k_id)
            bld.add(row_r, int(vr[t, kp]), -z_g)
            bld.add(row_r, int(vi[t, kp]), -z_b)
            bld.add(row_i, int(vi[t, kp]), -z_g)
            bld.add(row_i, int(vr[t, kp]), z_b)
            _, _, nr, ni = flow_noise[t][f]
            bld.add(row_r, nr, -1.0)
            bld.add(row_i, ni, -1.0)

        if include_vmag:
            for m in period.injections:
                pos = network.bus_index(m.bus)
                row = bld.new_row(RowTag(ROW_VMAG, t, m.bus), const=-m.z_vm * m.z_vm)
                bld.add(row, get_lift(int(vr[t, pos]), int(vr[t, pos])), 1.0)
                bld.add(row, get_lift(int(vi[t, pos]), int(vi[t, pos])), 1.0)
                nvm = nvm_by_bus[m.bus]
                bld.add(row, get_lift(nvm, nvm), -1.0)
                bld.add(row, nvm, 2.0 * m.z_vm)

        if options.angle_reference:
            row = bld.new_row(RowTag(ROW_REFERENCE, t, network.buses[slack_pos].id, "i"))
            bld.add(row, int(vi[t, slack_pos]), 1.0)
        if not include_vmag:
            # without magnitude rows the voltage scale is free; pin the slack
            # real voltage to its measured magnitude (angle is zero there)
            m = inj_by_bus.get(network.buses[slack_pos].id)
            if m is not None:
                row = bld.new_row(
                    RowTag(ROW_REFERENCE, t, network.buses[slack_pos].id, "r"),
                    const=-m.z_vm,
                )
                bld.add(row, int(vr[t, slack_pos]), 1.0)

    system = bld.finish(n_total)

    # ---- objective weights and default boxes -------------------------------
    weights = np.zeros(n_total)
    lower = np.full(n_total, -np.inf)
    upper = np.full(n_total, np.inf)
    vr_lo, vr_hi, vi_lo, vi_hi = rectangular_voltage_box(
        options.vm_lo, options.vm_hi, options.angle_max_deg
    )
    for t in range(n_periods):
        lower[vr[t]] = vr_lo
        upper[vr[t]] = vr_hi
        lower[vi[t]] = vi_lo
        upper[vi[t]] = vi_hi
        inj_by_bus = {m.bus: m for m in measurements.periods[t].injections}
        for (bus_id, nr, ni, nvm) in inj_noise[t]:
            m = inj_by_bus[bus_id]
            weights[nr] = m.w_current
            weights[ni] = m.w_current
            if nvm >= 0:
                weights[nvm] = m.w_voltage
                lower[nvm] = -options.noise_vm_bound
                upper[nvm] = options.noise_vm_bound
        for f, (_, _, nr, ni) in enumerate(flow_noise[t]):
            w = measurements.periods[t].flows[f].w_current
            weights[nr] = w
            weights[ni] = w
    for p_idx, e in enumerate(params):
        ref = param_ref[p_idx]
        lo, hi = default_parameter_box(ref, options.param_bound_factor)
        if delta:
            lo, hi = lo - ref, hi - ref
        lower[param_offset + p_idx] = lo
        upper[param_offset + p_idx] = hi

    space = VariableSpace(
        n=n_total,
        n_periods=n_periods,
        n_bus=n_bus,
        vr=vr,
        vi=vi,
        inj_noise=tuple(inj_noise),
        flow_noise=tuple(flow_noise),
        param_keys=param_keys,
        param_offset=param_offset,
        lifts=tuple(lifts),
        names=tuple(names),
    )
    return EstimationProblem(
        space=space,
        system=system,
        weights=weights,
        lifts=tuple(lifts),
        lower=lower,
        upper=upper,
        network=network,
        measurements=measurements,
        unknowns=unknowns,
        delta_form=delta,
        param_reference=param_ref,
        include_vmag=include_vmag,
    )


def build_se(network: Network, measurements: MeasurementSet) -> EstimationProblem:
    """Convex state estimation with all parameters known: purely affine rows."""
    if measurements.n_periods != 1:
        raise DataError("state estimation expects a single period")
    options = PseOptions(include_vmag=False)
    return _build(network, measurements, UnknownParameterSet(), options)


def build_pse(network: Network, measurements: MeasurementSet,
              unknowns: UnknownParameterSet,
              options: PseOptions = PseOptions()) -> EstimationProblem:
    """Joint parameter-state estimation over one period."""
    if measurements.n_periods != 1:
        raise DataError("build_pse expects a single period; see build_multi_period_pse")
    return _build(network, measurements, unknowns, options)


def build_multi_period_pse(network: Network, measurements: MeasurementSet,
                           unknowns: UnknownParameterSet,
                           options: PseOptions = PseOptions()) -> EstimationProblem:
    """Stacked periods sharing one set of parameter variables."""
    return _build(network, measurements, unknowns, options)


@dataclass(frozen=True, eq=False)
class EvalResult:
    objective: float
    objective_gradient: np.ndarray
    residuals: np.ndarray
    jacobian: sp.csr_matrix
    hessian: object  # callable(multipliers) -> csr Lagrangian constraint Hessian


def evaluate(problem: EstimationProblem, x: np.ndarray, mode: str = "lifted") -> EvalResult:
    """Residuals and exact derivatives of the constraint system at ``x``.

    In lifted mode the ``s`` variables are treated as free (the rows are then
    affine); in unlifted mode each ``s`` is replaced by its defining product
    and the chain rule is folded into the Jacobian.
    """
    if x.shape != (problem.n,):
        raise DataError(f"point has dimension {x.shape}, expected ({problem.n},)")
    if mode not in ("lifted", "unlifted"):
        raise DataError(f"unknown evaluation mode '{mode}'")
    a = problem.system.a
    w = problem.weights
    objective = float(np.sum(w * x * x))
    gradient = 2.0 * w * x
    n = problem.n
    if mode == "lifted" or not problem.lifts:
        residuals = a @ x + problem.system.const

        def hessian(_multipliers):
            return sp.csr_matrix((n, n))

        return EvalResult(objective, gradient, residuals, a, hessian)

    s_idx = np.array([d.s for d in problem.lifts], dtype=int)
    i_idx = np.array([d.i for d in problem.lifts], dtype=int)
    j_idx = np.array([d.j for d in problem.lifts], dtype=int)
    x_sub = x.copy()
    x_sub[s_idx] = x[i_idx] * x[j_idx]
    residuals = a @ x_sub + problem.system.const

    # jacobian: zero the s columns, add S @ dP where dP row l = x_j e_i + x_i e_j
    keep = np.ones(n, dtype=bool)
    keep[s_idx] = False
    mask = sp.diags(keep.astype(float))
    s_cols = a[:, s_idx]
    dp = sp.coo_matrix(
        (
            np.concatenate([x[j_idx], x[i_idx]]),
            (
                np.concatenate([np.arange(len(s_idx)), np.arange(len(s_idx))]),
                np.concatenate([i_idx, j_idx]),
            ),
        ),
        shape=(len(s_idx), n),
    ).tocsr()
    jacobian = (a @ mask + s_cols @ dp).tocsr()

    s_cols_csc = s_cols.tocsc()

    def hessian(multipliers):
        # each row r with coefficient c on lift (i, j) contributes
        # c * lambda_r * (E_ij + E_ji) to the Lagrangian Hessian
        lam_s = s_cols_csc.T @ multipliers  # aggregated multiplier per lift
        data = np.concatenate([lam_s, lam_s])
        rows = np.concatenate([i_idx, j_idx])
        cols = np.concatenate([j_idx, i_idx])
        return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()

    return EvalResult(objective, gradient, residuals, jacobian, hessian)


def _fill_consistent_tail(problem: EstimationProblem, x: np.ndarray) -> np.ndarray:
    """Set the magnitude-noise terms and lifted products consistently with x."""
    sp_ = problem.space
    if problem.include_vmag:
        for t in range(sp_.n_periods):
            inj_by_bus = {m.bus: m for m in problem.measurements.periods[t].injections}
            for (bus_id, _, _, nvm) in sp_.inj_noise[t]:
                pos = problem.network.bus_index(bus_id)
                vm = np.hypot(x[sp_.vr[t, pos]], x[sp_.vi[t, pos]])
                x[nvm] = inj_by_bus[bus_id].z_vm - vm
    for d in problem.lifts:
        x[d.s] = x[d.i] * x[d.j]
    return x


def flat_start(problem: EstimationProblem) -> np.ndarray:
    """All voltages at 1.0 angle 0, parameters at their reference, zero noise."""
    x = np.zeros(problem.n)
    sp_ = problem.space
    for t in range(sp_.n_periods):
        x[sp_.vr[t]] = 1.0
    if sp_.n_params and not problem.delta_form:
        x[sp_.param_offset : sp_.param_offset + sp_.n_params] = problem.param_reference
    return _fill_consistent_tail(problem, x)


def random_start(problem: EstimationProblem, seed: int,
                 vm_range: tuple[float, float] = (0.95, 1.05),
                 angle_max_deg: float = 30.0) -> np.ndarray:
    """Voltages drawn uniformly in a polar box, parameters uniform in their bounds."""
    rng = np.random.default_rng(seed)
    x = np.zeros(problem.n)
    sp_ = problem.space
    for t in range(sp_.n_periods):
        vm = rng.uniform(vm_range[0], vm_range[1], sp_.n_bus)
        th = rng.uniform(-np.deg2rad(angle_max_deg), np.deg2rad(angle_max_deg), sp_.n_bus)
        x[sp_.vr[t]] = vm * np.cos(th)
        x[sp_.vi[t]] = vm * np.sin(th)
    for p in range(sp_.n_params):
        col = sp_.param_offset + p
        lo, hi = problem.lower[col], problem.upper[col]
        if np.isfinite(lo) and np.isfinite(hi):
            x[col] = rng.uniform(lo, hi)
    return _fill_consistent_tail(problem, x)


def absorb_noise_residuals(problem: EstimationProblem, x: np.ndarray) -> np.ndarray:
    """Set each noise variable to the residual of its row, making every row
    that carries a noise term exactly feasible at the given voltages and
    parameters (magnitude noises are assumed already consistent)."""
    sp_ = problem.space
    noise_cols = []
    for t in range(sp_.n_periods):
        for (_, nr, ni, _) in sp_.inj_noise[t]:
            noise_cols += [nr, ni]
        for (_, _, nr, ni) in sp_.flow_noise[t]:
            noise_cols += [nr, ni]
    x = x.copy()
    x[noise_cols] = 0.0
    residuals = evaluate(problem, x, mode="unlifted").residuals
    a_csc = problem.system.a.tocsc()
    for col in noise_cols:
        start, end = a_csc.indptr[col], a_csc.indptr[col + 1]
        rows = a_csc.indices[start:end]
        coefs = a_csc.data[start:end]
        # each current-noise variable appears in exactly one row
        x[col] = -residuals[rows[0]] / coefs[0] if rows.size else 0.0
    return x


def warm_start(problem: EstimationProblem, voltage_estimates) -> np.ndarray:
    """Feasible start from per-period voltage estimates (e.g. a prior solve
    of the known-parameter estimation) and best-known parameter values."""
    pts = voltage_estimates if isinstance(voltage_estimates, (list, tuple)) else [voltage_estimates]
    x = flat_start(problem)
    sp_ = problem.space
    for t in range(sp_.n_periods):
        vr, vi = pts[t if len(pts) > 1 else 0]
        x[sp_.vr[t]] = vr
        x[sp_.vi[t]] = vi
    x = _fill_consistent_tail(problem, x)
    return absorb_noise_residuals(problem, x)


def truth_point(problem: EstimationProblem, point, true_params: np.ndarray | None = None
                ) -> np.ndarray:
    """Extend operating-point voltages with zero noise, true parameters, and
    consistent lifted products; useful as a feasibility oracle and warm start.

    ``point`` is one OperatingPoint or a sequence of them (one per period).
    """
    points = point if isinstance(point, (list, tuple)) else [point] * problem.space.n_periods
    x = np.zeros(problem.n)
    sp_ = problem.space
    for t in range(sp_.n_periods):
        x[sp_.vr[t]] = points[t].v_real
        x[sp_.vi[t]] = points[t].v_imag
    if sp_.n_params:
        if true_params is None:
            true_params = problem.param_reference.copy()
        x[sp_.param_offset : sp_.param_offset + sp_.n_params] = (
            true_params - problem.param_reference if problem.delta_form else true_params
        )
    return _fill_consistent_tail(problem, x)
