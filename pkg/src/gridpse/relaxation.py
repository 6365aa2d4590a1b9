"""McCormick envelopes, relaxed problem assembly, and sequential bound tightening.

The relaxation drops the bilinear defining equalities and keeps, per lifted
product, the four envelope inequalities over the factor boxes (squares get a
convex-lower / secant-upper pair). Solving the result in convex mode yields a
certified lower bound on the exact problem's optimum. Bound tightening
minimizes and maximizes each parameter over the relaxed set intersected with
an objective cut, rebuilding envelopes between rounds.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .model import DataError
from .problem import EstimationProblem, flat_start
from .solver import (
    ConstraintBlock,
    CoreProblem,
    SolveResult,
    SolverOptions,
    Status,
    minimize,
)


class SbtInfeasibleError(Exception):
    """A bound subproblem was infeasible: the objective cut contradicts the
    current bounds (typically a poor or inconsistent reference solution)."""


@dataclass(frozen=True)
class ParameterBounds:
    lower: np.ndarray
    upper: np.ndarray
    provenance: str = "initial"

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape:
            raise DataError("bound arrays must have matching shapes")
        if np.any(lo > hi):
            raise DataError("inverted parameter bounds")

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def __len__(self) -> int:
        return self.lower.size


@dataclass(frozen=True)
class VoltageBox:
    """Rectangular per-bus bounds on the rectangular voltage components."""

    vr_lo: np.ndarray
    vr_hi: np.ndarray
    vi_lo: np.ndarray
    vi_hi: np.ndarray

    def __post_init__(self):
        for name in ("vr_lo", "vr_hi", "vi_lo", "vi_hi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.vr_lo > self.vr_hi) or np.any(self.vi_lo > self.vi_hi):
            raise DataError("empty voltage box")

    @classmethod
    def from_polar(cls, n_bus: int, vm_lo: float = 0.90, vm_hi: float = 1.10,
                   angle_max_deg: float = 30.0) -> "VoltageBox":
        a = np.deg2rad(angle_max_deg)
        return cls(
            vr_lo=np.full(n_bus, vm_lo * np.cos(a)),
            vr_hi=np.full(n_bus, vm_hi),
            vi_lo=np.full(n_bus, -vm_hi * np.sin(a)),
            vi_hi=np.full(n_bus, vm_hi * np.sin(a)),
        )

    @classmethod
    def around(cls, v_real: np.ndarray, v_imag: np.ndarray, margin: float = 0.03
               ) -> "VoltageBox":
        """Tight per-bus box around prior voltage estimates (the SCADA-backlog
        regime): the known-parameter estimation solution plus a margin."""
        return cls(
            vr_lo=np.asarray(v_real) - margin,
            vr_hi=np.asarray(v_real) + margin,
            vi_lo=np.asarray(v_imag) - margin,
            vi_hi=np.asarray(v_imag) + margin,
        )


def default_parameter_bounds(problem: EstimationProblem) -> ParameterBounds:
    """Bounds carried on the problem (wide sign-respecting policy)."""
    off = problem.space.param_offset
    k = problem.space.n_params
    return ParameterBounds(
        lower=problem.lower[off : off + k].copy(),
        upper=problem.upper[off : off + k].copy(),
    )


def mccormick_rows(bounds_i: tuple[float, float], bounds_j: tuple[float, float]
                   ) -> list[tuple[float, float, float, float]]:
    """The four envelope inequalities for s = x_i * x_j over a box.

    Each row is (coef_i, coef_j, coef_s, const) with the convention
    coef_i * x_i + coef_j * x_j + coef_s * s + const <= 0. The envelope is
    exact at the box corners.
    """
    lo_i, hi_i = bounds_i
    lo_j, hi_j = bounds_j
    if lo_i > hi_i or lo_j > hi_j:
        raise DataError("inverted bounds for a bilinear factor")
    return [
        (lo_j, lo_i, -1.0, -lo_i * lo_j),   # s >= lo_i x_j + lo_j x_i - lo_i lo_j
        (hi_j, hi_i, -1.0, -hi_i * hi_j),   # s >= hi_i x_j + hi_j x_i - hi_i hi_j
        (-hi_j, -lo_i, 1.0, lo_i * hi_j),   # s <= lo_i x_j + hi_j x_i - lo_i hi_j
        (-lo_j, -hi_i, 1.0, hi_i * lo_j),   # s <= hi_i x_j + lo_j x_i - hi_i lo_j
    ]


def square_rows(bounds: tuple[float, float]) -> dict:
    """Relaxation of s = x**2 over a box: a convex lower bound s >= x**2 and
    the affine secant upper bound s <= (lo + hi) x - lo * hi."""
    lo, hi = bounds
    if lo > hi:
        raise DataError("inverted bounds for a squared variable")
    return {
        "secant": (-(lo + hi), 1.0, lo * hi),  # coef_x, coef_s, const (<= 0 row)
        "convex_lower": True,                   # x**2 - s <= 0, handled as quad row
    }


def envelope_interval(bounds_i, bounds_j, x_i: float, x_j: float) -> tuple[float, float]:
    """Feasible interval for the lifted value at a fixed (x_i, x_j)."""
    rows = mccormick_rows(bounds_i, bounds_j)
    # first two rows read s >= ci x_i + cj x_j + c0, last two s <= -(...)
    lo = max(r[0] * x_i + r[1] * x_j + r[3] for r in rows[:2])
    hi = min(-(r[0] * x_i + r[1] * x_j + r[3]) for r in rows[2:])
    return lo, hi


@dataclass(eq=False)
class RelaxedProblem:
    """The estimation problem's affine rows plus envelope/box inequalities."""

    base: EstimationProblem
    pbounds: ParameterBounds
    lower: np.ndarray            # per-variable boxes actually used (n,)
    upper: np.ndarray
    ineq: ConstraintBlock
    objective_cut: float | None = None
    tag: str = "relaxed"

    @property
    def n(self) -> int:
        return self.base.n

    def as_core_problem(self, objective_lin: np.ndarray | None = None,
                        use_weights: bool = True) -> CoreProblem:
        n = self.base.n
        ineq = self.ineq
        if self.objective_cut is not None:
            ineq = ConstraintBlock.stack([ineq, _objective_cut_row(self.base, self.objective_cut)])
        return CoreProblem(
            n=n,
            obj_diag=self.base.weights.copy() if use_weights else np.zeros(n),
            obj_lin=np.zeros(n) if objective_lin is None else objective_lin,
            eq=ConstraintBlock(a=self.base.system.a, b=self.base.system.const),
            ineq=ineq,
            convex=True,
        )

    def start_point(self) -> np.ndarray:
        x = flat_start(self.base)
        x = np.clip(x, self.lower, self.upper)
        for d in self.base.lifts:
            x[d.s] = x[d.i] * x[d.j]
        return x


def _objective_cut_row(problem: EstimationProblem, f_star: float) -> ConstraintBlock:
    """sum(w * n**2) - f_star <= 0."""
    n = problem.n
    cols = np.flatnonzero(problem.weights)
    return ConstraintBlock(
        a=sp.csr_matrix((1, n)),
        b=np.array([-f_star]),
        q_row=np.zeros(cols.size, dtype=int),
        q_i=cols,
        q_j=cols,
        q_c=problem.weights[cols].copy(),
    )


def build_relaxed(problem: EstimationProblem,
                  pbounds: ParameterBounds | None = None,
                  vbox: VoltageBox | None = None,
                  objective_cut: float | None = None) -> RelaxedProblem:
    """Replace the bilinear defining equalities by McCormick envelopes.

    Every factor of a lifted product must have finite bounds: parameters from
    ``pbounds``, voltages from ``vbox``, magnitude-noise terms from the box
    carried on the problem. With no lifted products the result is the plain
    affine problem (no envelope or box rows).
    """
    n = problem.n
    space = problem.space
    lower = problem.lower.copy()
    upper = problem.upper.copy()
    if pbounds is not None:
        if len(pbounds) != space.n_params:
            raise DataError("parameter bounds length mismatch")
        off = space.param_offset
        lower[off : off + space.n_params] = pbounds.lower
        upper[off : off + space.n_params] = pbounds.upper
    else:
        pbounds = default_parameter_bounds(problem)
    if vbox is not None:
        boxes = vbox if isinstance(vbox, (list, tuple)) else [vbox] * space.n_periods
        if len(boxes) != space.n_periods:
            raise DataError("need one voltage box (or one per period)")
        for t, box in enumerate(boxes):
            lower[space.vr[t]] = box.vr_lo
            upper[space.vr[t]] = box.vr_hi
            lower[space.vi[t]] = box.vi_lo
            upper[space.vi[t]] = box.vi_hi

    rows = []
    cols = []
    vals = []
    consts = []
    q_row, q_i, q_j, q_c = [], [], [], []

    def new_row(const: float) -> int:
        consts.append(const)
        return len(consts) - 1

    def add(r, c, v):
        if v != 0.0:
            rows.append(r)
            cols.append(c)
            vals.append(v)

    boxed: set[int] = set()

    def require_box(col: int):
        if not (np.isfinite(lower[col]) and np.isfinite(upper[col])):
            raise DataError(
                f"variable '{space.names[col]}' is a factor of a lifted product "
                "but has no finite bounds"
            )
        boxed.add(col)

    for d in problem.lifts:
        if d.is_square:
            require_box(d.i)
            sq = square_rows((lower[d.i], upper[d.i]))
            cx, cs, c0 = sq["secant"]
            r = new_row(c0)
            add(r, d.i, cx)
            add(r, d.s, cs)
            r = new_row(0.0)            # x**2 - s <= 0
            add(r, d.s, -1.0)
            q_row.append(r)
            q_i.append(d.i)
            q_j.append(d.i)
            q_c.append(1.0)
        else:
            require_box(d.i)
            require_box(d.j)
            for ci, cj, cs, c0 in mccormick_rows(
                (lower[d.i], upper[d.i]), (lower[d.j], upper[d.j])
            ):
                r = new_row(c0)
                add(r, d.i, ci)
                add(r, d.j, cj)
                add(r, d.s, cs)

    if problem.lifts:
        # box rows for all enveloped factors plus every voltage component
        for t in range(space.n_periods):
            boxed.update(int(c) for c in space.vr[t])
            boxed.update(int(c) for c in space.vi[t])
        for col in sorted(boxed):
            if not (np.isfinite(lower[col]) and np.isfinite(upper[col])):
                continue
            r = new_row(-upper[col])
            add(r, col, 1.0)            # x - hi <= 0
            r = new_row(lower[col])
            add(r, col, -1.0)           # lo - x <= 0

    ineq = ConstraintBlock(
        a=sp.coo_matrix((vals, (rows, cols)), shape=(len(consts), n)).tocsr(),
        b=np.array(consts, dtype=float),
        q_row=np.array(q_row, dtype=int),
        q_i=np.array(q_i, dtype=int),
        q_j=np.array(q_j, dtype=int),
        q_c=np.array(q_c, dtype=float),
    )
    return RelaxedProblem(
        base=problem,
        pbounds=pbounds,
        lower=lower,
        upper=upper,
        ineq=ineq,
        objective_cut=objective_cut,
        tag=f"relaxed[{pbounds.provenance}]",
    )


@dataclass(frozen=True)
class CertificateReport:
    nlp_objective: float
    relaxed_objective: float
    gap: float
    relative_gap: float
    sound: bool


def certificate(nlp_result: SolveResult, relaxed_result: SolveResult,
                tolerance: float = 1e-8) -> CertificateReport:
    """Optimality gap between a feasible exact solve and the relaxation's optimum."""
    if nlp_result.x.shape != relaxed_result.x.shape:
        raise DataError("certificate needs results for the same problem instance")
    gap = nlp_result.objective - relaxed_result.objective
    rel = gap / max(1e-12, abs(nlp_result.objective))
    return CertificateReport(
        nlp_objective=nlp_result.objective,
        relaxed_objective=relaxed_result.objective,
        gap=gap,
        relative_gap=rel,
        sound=gap >= -tolerance,
    )


def _bound_task(problem, pbounds_lo, pbounds_hi, vbox, f_star, p_idx, sense, options):
    relaxed = build_relaxed(
        problem,
        ParameterBounds(pbounds_lo, pbounds_hi),
        vbox,
        objective_cut=f_star if f_star is not None and np.isfinite(f_star) else None,
    )
    col = problem.space.param_offset + p_idx
    obj_lin = np.zeros(problem.n)
    obj_lin[col] = 1.0 if sense == "min" else -1.0
    core = relaxed.as_core_problem(objective_lin=obj_lin, use_weights=False)
    res = minimize(core, relaxed.start_point(), options,
                   problem_tag=f"sbt[{p_idx},{sense}]")
    if res.status is Status.RESTORATION_FAILURE or (
        res.status is Status.MAX_ITERATIONS and res.kkt_feasibility > 1e-6
    ):
        raise SbtInfeasibleError(
            f"bound subproblem for parameter {p_idx} ({sense}) did not find a "
            f"feasible point; the objective cut {f_star} may be inconsistent "
            "with the current bounds"
        )
    return float(res.x[col])


def sbt(problem: EstimationProblem,
        pbounds: ParameterBounds,
        vbox: VoltageBox | None = None,
        f_star: float | None = None,
        eps: float = 1e-2,
        max_rounds: int = 3,
        workers: int = 1,
        options: SolverOptions | None = None) -> ParameterBounds:
    """Sequential bound tightening over the unknown parameters.

    Per round, every parameter is independently minimized and maximized over
    the relaxed feasible set intersected with the objective cut
    ``f(n) <= f_star``; the envelopes are rebuilt from the updated bounds at a
    round barrier, until no parameter's bounds move by ``eps`` or the round
    limit is reached. Output bounds are nested within the input bounds.
    """
    if eps <= 0:
        raise DataError("bound-tightening tolerance must be positive")
    k = problem.space.n_params
    if len(pbounds) != k:
        raise DataError("parameter bounds length mismatch")
    options = options or SolverOptions(tolerance=1e-8, max_iterations=200)
    lo = pbounds.lower.copy()
    hi = pbounds.upper.copy()
    for rnd in range(1, max_rounds + 1):
        tasks = [(p, sense) for p in range(k) for sense in ("min", "max")]
        results: dict[tuple[int, str], float] = {}
        if workers > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                futs = {
                    pool.submit(_bound_task, problem, lo, hi, vbox, f_star, p, sense, options): (p, sense)
                    for p, sense in tasks
                }
                for fut in concurrent.futures.as_completed(futs):
                    results[futs[fut]] = fut.result()
        else:
            for p, sense in tasks:
                results[(p, sense)] = _bound_task(problem, lo, hi, vbox, f_star, p, sense, options)
        new_lo = lo.copy()
        new_hi = hi.copy()
        for p in range(k):
            cand_lo = np.clip(results[(p, "min")], lo[p], hi[p])
            cand_hi = np.clip(results[(p, "max")], lo[p], hi[p])
            if cand_lo > cand_hi:
                cand_lo = cand_hi = 0.5 * (cand_lo + cand_hi)
            new_lo[p] = cand_lo
            new_hi[p] = cand_hi
        movement = max(
            float(np.max(np.abs(new_lo - lo), initial=0.0)),
            float(np.max(np.abs(new_hi - hi), initial=0.0)),
        )
        lo, hi = new_lo, new_hi
        if movement < eps:
            break
    return ParameterBounds(lower=lo, upper=hi, provenance=f"sbt-iteration {rnd}")


# ---------------------------------------------------------------------------
# Bounds cache (reusable tightened bounds keyed by case signature)
# ---------------------------------------------------------------------------

def bounds_cache_key(problem: EstimationProblem) -> str:
    """Digest of the network data, unknown set, and period signature."""
    from .io import serialize_native_case  # deferred import to avoid a cycle

    h = hashlib.sha256()
    h.update(serialize_native_case(problem.network, problem.unknowns).encode())
    h.update(str(problem.space.n_periods).encode())
    h.update(str(problem.include_vmag).encode())
    return h.hexdigest()[:16]


def load_bounds_cache(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt bounds cache {path}: {exc}") from None


def store_bounds(path: str | Path, key: str, bounds: ParameterBounds,
                 f_star: float | None, eps: float) -> None:
    path = Path(path)
    cache = load_bounds_cache(path)
    cache[key] = {
        "lower": bounds.lower.tolist(),
        "upper": bounds.upper.tolist(),
        "f_star": f_star,
        "eps": eps,
        "provenance": bounds.provenance,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(cache, indent=2))
    tmp.replace(path)


def lookup_bounds(path: str | Path, key: str) -> ParameterBounds | None:
    entry = load_bounds_cache(path).get(key)
    if entry is None:
        return None
    return ParameterBounds(
        lower=np.array(entry["lower"]),
        upper=np.array(entry["upper"]),
        provenance=entry.get("provenance", "cache"),
    )
