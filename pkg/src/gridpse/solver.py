"""Primal-dual interior-point solver for the estimation problems.

One solver, two modes. ``exact-nlp`` enforces the bilinear defining
equalities ``s = x_i x_j`` (nonconvex; first-order KKT point contract).
``convex`` solves problems whose bilinear equalities were replaced by
envelope inequalities — the McCormick relaxation and the bound-tightening
subproblems — to global optimality.

The Newton systems are condensed to the symmetric form
``[[H + J_i' D J_i + delta_x I, J_e'], [J_e, -delta_c I]]`` and factored with
an inertia check: a dense LDL' below the size threshold, and above it a
symmetric-mode sparse LU whose diagonal pivot signs provide the inertia.
``delta_x`` is escalated until the inertia is correct (the standard
regularization for nonconvex steps).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as dla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import DataError
from .problem import EstimationProblem

DENSE_THRESHOLD = 500


class SolverError(Exception):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "optimal-tolerance-met"
    ACCEPTABLE = "acceptable-tolerance-met"
    MAX_ITERATIONS = "max-iterations"
    RESTORATION_FAILURE = "restoration-failure"


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-8
    max_iterations: int = 300
    mu_init: float = 1e-2
    regularization_floor: float = 1e-9
    backtrack_ratio: float = 0.5
    min_step: float = 1e-12
    init_mode: str = "warm"  # flat | warm | random-in-box
    seed: int | None = None
    verbose: bool = False
    # optional relaxed termination for degenerate problems: stop once the
    # scaled KKT error stays below this level for `acceptable_iterations`
    # consecutive iterations (disabled when None)
    acceptable_tolerance: float | None = None
    acceptable_iterations: int = 8

    def __post_init__(self):
        if self.tolerance <= 0:
            raise DataError("solver tolerance must be positive")
        if not 0 < self.backtrack_ratio < 1:
            raise DataError("backtracking ratio must lie in (0, 1)")
        if not 0 < self.min_step < 1:
            raise DataError("minimum step must lie in (0, 1)")


@dataclass(eq=False)
class ConstraintBlock:
    """Rows of the form  a @ x + b + sum(c * x[i] * x[j])  (per-row quad terms)."""

    a: sp.csr_matrix
    b: np.ndarray
    q_row: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    q_i: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    q_j: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    q_c: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]

    def value(self, x: np.ndarray) -> np.ndarray:
        out = self.a @ x + self.b
        if self.q_row.size:
            np.add.at(out, self.q_row, self.q_c * x[self.q_i] * x[self.q_j])
        return out

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        if not self.q_row.size:
            return self.a
        extra = sp.coo_matrix(
            (
                np.concatenate([self.q_c * x[self.q_j], self.q_c * x[self.q_i]]),
                (
                    np.concatenate([self.q_row, self.q_row]),
                    np.concatenate([self.q_i, self.q_j]),
                ),
            ),
            shape=self.a.shape,
        )
        return (self.a + extra).tocsr()

    def hessian(self, lam: np.ndarray) -> sp.csr_matrix:
        n = self.n
        if not self.q_row.size:
            return sp.csr_matrix((n, n))
        w = self.q_c * lam[self.q_row]
        return sp.coo_matrix(
            (
                np.concatenate([w, w]),
                (np.concatenate([self.q_i, self.q_j]),
                 np.concatenate([self.q_j, self.q_i])),
            ),
            shape=(n, n),
        ).tocsr()

    @staticmethod
    def empty(n: int) -> "ConstraintBlock":
        return ConstraintBlock(a=sp.csr_matrix((0, n)), b=np.zeros(0))

    @staticmethod
    def stack(blocks: list["ConstraintBlock"]) -> "ConstraintBlock":
        blocks = [b for b in blocks if b is not None]
        n = blocks[0].n
        offsets = np.cumsum([0] + [b.m for b in blocks])
        return ConstraintBlock(
            a=sp.vstack([b.a for b in blocks], format="csr"),
            b=np.concatenate([b.b for b in blocks]),
            q_row=np.concatenate([b.q_row + off for b, off in zip(blocks, offsets)]).astype(int),
            q_i=np.concatenate([b.q_i for b in blocks]).astype(int),
            q_j=np.concatenate([b.q_j for b in blocks]).astype(int),
            q_c=np.concatenate([b.q_c for b in blocks]),
        )


@dataclass(eq=False)
class CoreProblem:
    """min x' diag(w) x + lin' x + const  s.t.  eq(x) = 0, ineq(x) <= 0.

    ``convex`` marks problems whose Lagrangian Hessian is positive
    semidefinite by construction; the solver then skips the inertia
    machinery and treats its result as a global optimum.
    """

    n: int
    obj_diag: np.ndarray
    obj_lin: np.ndarray
    eq: ConstraintBlock
    ineq: ConstraintBlock
    obj_const: float = 0.0
    convex: bool = False

    def objective(self, x: np.ndarray) -> float:
        return float(np.sum(self.obj_diag * x * x) + self.obj_lin @ x + self.obj_const)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.obj_diag * x + self.obj_lin


@dataclass(eq=False)
class SolveResult:
    x: np.ndarray
    objective: float
    status: Status
    iterations: int
    kkt_stationarity: float
    kkt_feasibility: float
    kkt_complementarity: float
    mu_history: list = field(default_factory=list)
    eq_duals: np.ndarray | None = None
    ineq_duals: np.ndarray | None = None
    problem_tag: str = ""

    @property
    def converged(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.ACCEPTABLE)


# ---------------------------------------------------------------------------
# Symmetric indefinite KKT factorization with inertia
# ---------------------------------------------------------------------------

class _DenseLdl:
    def __init__(self, k: np.ndarray):
        self.lu, self.d, self.perm = dla.ldl(k, lower=True)
        self.n = k.shape[0]

    def inertia(self) -> tuple[int, int, int]:
        pos = neg = zero = 0
        d = self.d
        i = 0
        tiny = 1e-14 * max(1.0, float(np.max(np.abs(d))))
        while i < self.n:
            if i + 1 < self.n and abs(d[i, i + 1]) > tiny:
                det = d[i, i] * d[i + 1, i + 1] - d[i, i + 1] * d[i + 1, i]
                if det < 0:
                    pos += 1
                    neg += 1
                else:
                    tr = d[i, i] + d[i + 1, i + 1]
                    if tr > 0:
                        pos += 2
                    else:
                        neg += 2
                i += 2
            else:
                if d[i, i] > tiny:
                    pos += 1
                elif d[i, i] < -tiny:
                    neg += 1
                else:
                    zero += 1
                i += 1
        return pos, neg, zero

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        ltri = self.lu[self.perm]
        u = rhs[self.perm]
        w = dla.solve_triangular(ltri, u, lower=True, unit_diagonal=True)
        v = np.empty_like(w)
        d = self.d
        i = 0
        while i < self.n:
            if i + 1 < self.n and d[i, i + 1] != 0.0:
                blk = d[i : i + 2, i : i + 2]
                v[i : i + 2] = np.linalg.solve(blk, w[i : i + 2])
                i += 2
            else:
                v[i] = w[i] / d[i, i]
                i += 1
        g = dla.solve_triangular(ltri.T, v, lower=False, unit_diagonal=True)
        out = np.empty_like(g)
        out[self.perm] = g
        return out


class _SparseLu:
    """Pivoted sparse LU of the KKT matrix.

    Partial pivoting destroys the symmetric inertia information, so the
    nonconvex path pairs this factorization with a directional curvature test
    on the computed step (escalating the regularization when it fails), which
    plays the role of the dense path's explicit inertia count.
    """

    def __init__(self, k: sp.csc_matrix):
        self.k = k
        self.fac = spla.splu(k)

    def inertia(self):
        return None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self.fac.solve(rhs)
        r = rhs - self.k @ x
        if np.max(np.abs(r)) > 1e-12 * max(1.0, float(np.max(np.abs(rhs)))):
            x = x + self.fac.solve(r)
        return x


def _factor(k_blocks, dense: bool):
    if dense:
        k = sp.bmat(k_blocks, format="csr").toarray()
        try:
            return _DenseLdl(k)
        except (np.linalg.LinAlgError, ValueError):
            return None
    k = sp.bmat(k_blocks, format="csc")
    try:
        fac = _SparseLu(k)
        if not np.all(np.isfinite(fac.fac.U.diagonal())):
            return None
        return fac
    except (RuntimeError, ValueError):
        return None


# ---------------------------------------------------------------------------
# Core interior-point iteration
# ---------------------------------------------------------------------------

def minimize(core: CoreProblem, x0: np.ndarray, options: SolverOptions = SolverOptions(),
             problem_tag: str = "") -> SolveResult:
    n = core.n
    if x0.shape != (n,):
        raise DataError(f"start point has dimension {x0.shape}, expected ({n},)")
    m_e, m_i = core.eq.m, core.ineq.m
    dense = n < DENSE_THRESHOLD
    x = np.asarray(x0, dtype=float).copy()
    y = np.zeros(m_e)
    obj_hess = sp.diags(2.0 * core.obj_diag)

    tol = options.tolerance
    if m_i:
        mu = options.mu_init
        ci = core.ineq.value(x)
        t = np.maximum(-ci, 1e-2)
        z = np.minimum(np.maximum(mu / t, 1e-8), 1e8)
    else:
        mu = 0.0
        t = np.zeros(0)
        z = np.zeros(0)
    mu_floor = min(1e-11, 0.01 * tol)
    nu = 1.0
    delta_last = 0.0
    delta_c = 1e-10
    mu_history = [mu]
    tiny_steps = 0

    def kkt_errors(x, t, y, z, mu):
        grad = core.gradient(x)
        ce = core.eq.value(x)
        je = core.eq.jacobian(x)
        r_d = grad + (je.T @ y if m_e else 0.0)
        ci = ji = r_i = comp = None
        if m_i:
            ci = core.ineq.value(x)
            ji = core.ineq.jacobian(x)
            r_d = r_d + ji.T @ z
            r_i = ci + t
            comp = z * t
        s_d = max(100.0, (np.sum(np.abs(y)) + np.sum(np.abs(z))) / max(1, m_e + m_i)) / 100.0
        s_c = max(100.0, (np.sum(np.abs(z)) / max(1, m_i))) / 100.0 if m_i else 1.0
        stat = float(np.max(np.abs(r_d))) if n else 0.0
        feas = float(np.max(np.abs(ce))) if m_e else 0.0
        if m_i:
            feas = max(feas, float(np.max(np.abs(r_i))))
        comp_err = float(np.max(np.abs(comp - mu))) if m_i else 0.0
        err = max(stat / s_d, feas, comp_err / s_c)
        return err, stat, feas, comp_err, grad, ce, je, ci, ji

    it = 0
    acceptable_count = 0
    for it in range(options.max_iterations):
        err0, stat, feas, comp0, grad, ce, je, ci, ji = kkt_errors(x, t, y, z, 0.0)
        if err0 <= tol:
            return SolveResult(
                x=x, objective=core.objective(x), status=Status.OPTIMAL, iterations=it,
                kkt_stationarity=stat, kkt_feasibility=feas, kkt_complementarity=comp0,
                mu_history=mu_history, eq_duals=y, ineq_duals=z, problem_tag=problem_tag,
            )
        if options.acceptable_tolerance is not None and err0 <= options.acceptable_tolerance:
            acceptable_count += 1
            if acceptable_count >= options.acceptable_iterations:
                return SolveResult(
                    x=x, objective=core.objective(x), status=Status.ACCEPTABLE,
                    iterations=it, kkt_stationarity=stat, kkt_feasibility=feas,
                    kkt_complementarity=comp0, mu_history=mu_history,
                    eq_duals=y, ineq_duals=z, problem_tag=problem_tag,
                )
        else:
            acceptable_count = 0
        if m_i:
            err_mu = max(
                stat, feas, float(np.max(np.abs(z * t - mu))) if m_i else 0.0
            )
            while mu > mu_floor and err_mu <= 10.0 * mu:
                mu = max(mu_floor, min(0.2 * mu, mu ** 1.2))
                mu_history.append(mu)
                err_mu = max(stat, feas, float(np.max(np.abs(z * t - mu))))

        # Lagrangian Hessian and condensed KKT blocks
        h = obj_hess + core.eq.hessian(y)
        if m_i:
            h = h + core.ineq.hessian(z)
            # clipping the barrier diagonal guards the factorization against
            # the extreme slack/dual ratios of the final barrier stages
            d_sigma = np.clip(z / t, 1e-10, 1e12)
            m_block = h + (ji.T @ sp.diags(d_sigma) @ ji)
            comp = z * t - mu
            rhs_x = -(grad + je.T @ y + ji.T @ z) + ji.T @ (comp / t - d_sigma * (ci + t))
        else:
            m_block = h
            rhs_x = -(grad + (je.T @ y if m_e else 0.0))
        rhs = np.concatenate([rhs_x, -ce])

        def solve_with(fac, comp_vec):
            """Back-substitute a Newton step for a given complementarity target."""
            if m_i:
                rhs_x = -(grad + je.T @ y + ji.T @ z) + ji.T @ (comp_vec / t - d_sigma * (ci + t))
                full_rhs = np.concatenate([rhs_x, -ce])
            else:
                full_rhs = rhs
            sol = fac.solve(full_rhs)
            if not np.all(np.isfinite(sol)):
                return None
            dx = sol[:n]
            dy = sol[n:] if m_e else np.zeros(0)
            if m_i:
                dt = -(ci + t) - ji @ dx
                dz = -comp_vec / t - d_sigma * dt
            else:
                dt = np.zeros(0)
                dz = np.zeros(0)
            return dx, dy, dt, dz

        def direction(delta):
            """Factor the regularized KKT system; None when inertia is wrong."""
            blocks = [
                [m_block + sp.diags(np.full(n, delta)), je.T if m_e else None],
                [je if m_e else None, -sp.diags(np.full(m_e, delta_c)) if m_e else None],
            ]
            if m_e == 0:
                blocks = [[m_block + sp.diags(np.full(n, delta))]]
            fac = _factor(blocks, dense)
            if fac is None:
                return None
            if not core.convex:
                inertia = fac.inertia()
                if inertia is not None:
                    pos, neg, zero = inertia
                    if not (pos == n and neg == m_e and zero == 0):
                        return None
            comp = z * t - mu if m_i else np.zeros(0)
            step = solve_with(fac, comp)
            if step is None:
                return None
            dx, dy, dt, dz = step
            if core.convex and m_i:
                # second-order correction of the complementarity target; the
                # same factorization is reused, and the corrector prevents
                # jamming against degenerate active sets
                step2 = solve_with(fac, comp + dt * dz)
                if step2 is not None:
                    dx, dy, dt, dz = step2
            if not core.convex and not dense:
                # curvature surrogate for the unavailable sparse inertia
                ndx = float(dx @ dx)
                if ndx > 0:
                    cur = float(dx @ (m_block @ dx)) + delta * ndx
                    if cur < 1e-10 * ndx:
                        return None
            return dx, dy, dt, dz

        def theta(xv, tv):
            val = float(np.sum(np.abs(core.eq.value(xv)))) if m_e else 0.0
            if m_i:
                val += float(np.sum(np.abs(core.ineq.value(xv) + tv)))
            return val

        def linesearch(dx, dy, dt, dz, nu):
            tau = max(0.99, 1.0 - mu)
            alpha_max = 1.0
            alpha_z = 1.0
            if m_i:
                neg_t = dt < 0
                if np.any(neg_t):
                    alpha_max = min(1.0, float(np.min(-tau * t[neg_t] / dt[neg_t])))
                neg_z = dz < 0
                if np.any(neg_z):
                    alpha_z = min(1.0, float(np.min(-tau * z[neg_z] / dz[neg_z])))
            nu = max(nu, 2.0 * (float(np.max(np.abs(y + dy), initial=0.0))
                                + float(np.max(np.abs(z + alpha_z * dz), initial=0.0))), 1.0)

            def merit(xv, tv):
                val = core.objective(xv) + nu * theta(xv, tv)
                if m_i:
                    val -= mu * float(np.sum(np.log(tv)))
                return val

            phi0 = merit(x, t)
            dphi = float(grad @ dx) - nu * theta(x, t)
            if m_i:
                dphi -= mu * float(np.sum(dt / t))
            # overshoot guard: start the search at a bounded primal step
            alpha_start = min(alpha_max, 50.0 / max(1.0, float(np.max(np.abs(dx)))))
            alpha = alpha_start
            accepted = False
            while alpha >= options.min_step:
                x_new = x + alpha * dx
                t_new = t + alpha * dt if m_i else t
                if merit(x_new, t_new) <= phi0 + 1e-4 * alpha * min(dphi, 0.0):
                    accepted = True
                    break
                alpha *= options.backtrack_ratio
            return alpha, alpha_start, alpha_z, accepted, nu

        # Levenberg-style adaptation: a collapsing line search means the local
        # quadratic model is poor along a weakly-determined direction, so the
        # step is shortened by escalating the primal regularization.
        if core.convex:
            delta = options.regularization_floor
        elif delta_last == 0.0:
            delta = 0.0
        else:
            delta = max(options.regularization_floor, delta_last / 3.0)
        step = None
        for _attempt in range(12):
            cand = direction(delta)
            if cand is None:
                delta = max(options.regularization_floor,
                            10.0 * delta if delta > 0 else options.regularization_floor)
                if delta > 1e14:
                    break
                continue
            alpha, alpha_start, alpha_z, accepted, nu = linesearch(*cand, nu)
            quality = 1e-3 if core.convex else 0.25
            good = accepted and alpha >= quality * alpha_start
            if good or delta >= 1e10:
                step = (cand, alpha, alpha_z, accepted)
                break
            delta = max(options.regularization_floor, 10.0 * max(delta, 1e-8))
        if step is None:
            return _failed(core, x, t, y, z, it, mu_history, problem_tag,
                           Status.RESTORATION_FAILURE)
        (dx, dy, dt, dz), alpha, alpha_z, accepted = step
        delta_last = delta
        if not accepted:
            alpha = options.min_step
            tiny_steps += 1
            if tiny_steps >= 5:
                return _failed(core, x, t, y, z, it, mu_history, problem_tag,
                               Status.RESTORATION_FAILURE)
        else:
            tiny_steps = 0

        if options.verbose:
            print(
                f"  it{it:3d} obj={core.objective(x):.6e} feas={feas:.2e} "
                f"stat={stat:.2e} mu={mu:.1e} delta={delta:.1e} "
                f"alpha={alpha:.2e} |dx|={float(np.max(np.abs(dx))):.2e}"
            )
        x = x + alpha * dx
        # full multiplier step: the KKT solve's y + dy is the new multiplier
        # estimate, and equality duals do not enter the primal merit
        y = y + dy
        if m_i:
            t = t + alpha * dt
            z = z + alpha_z * dz
            # safe slack reset: raising t to the actual interior margin zeros
            # the slack residual and lowers both merit terms
            t = np.maximum(t, -core.ineq.value(x))
            if mu > 0:
                # keep duals consistent with the barrier target
                z = np.clip(z, mu / (1e10 * t), 1e10 * mu / t)

    err0, stat, feas, comp0, *_ = kkt_errors(x, t, y, z, 0.0)
    return SolveResult(
        x=x, objective=core.objective(x), status=Status.MAX_ITERATIONS, iterations=it + 1,
        kkt_stationarity=stat, kkt_feasibility=feas, kkt_complementarity=comp0,
        mu_history=mu_history, eq_duals=y, ineq_duals=z, problem_tag=problem_tag,
    )


def _failed(core, x, t, y, z, it, mu_history, tag, status):
    grad = core.gradient(x)
    ce = core.eq.value(x)
    stat = float(np.max(np.abs(grad + (core.eq.jacobian(x).T @ y if core.eq.m else 0.0)
                               + (core.ineq.jacobian(x).T @ z if core.ineq.m else 0.0))))
    feas = float(np.max(np.abs(ce))) if core.eq.m else 0.0
    if core.ineq.m:
        feas = max(feas, float(np.max(np.abs(core.ineq.value(x) + t))))
    comp = float(np.max(np.abs(z * t))) if core.ineq.m else 0.0
    return SolveResult(
        x=x, objective=core.objective(x), status=status, iterations=it,
        kkt_stationarity=stat, kkt_feasibility=feas, kkt_complementarity=comp,
        mu_history=mu_history, eq_duals=y, ineq_duals=z, problem_tag=tag,
    )


# ---------------------------------------------------------------------------
# Adapters for the estimation problems
# ---------------------------------------------------------------------------

def definition_block(problem: EstimationProblem) -> ConstraintBlock:
    """Equality rows s - x_i * x_j = 0 for every lifted product."""
    n = problem.n
    lifts = problem.lifts
    m = len(lifts)
    a = sp.coo_matrix(
        (np.ones(m), (np.arange(m), [d.s for d in lifts])), shape=(m, n)
    ).tocsr()
    return ConstraintBlock(
        a=a,
        b=np.zeros(m),
        q_row=np.arange(m),
        q_i=np.array([d.i for d in lifts], dtype=int),
        q_j=np.array([d.j for d in lifts], dtype=int),
        q_c=-np.ones(m),
    )


def estimation_core(problem: EstimationProblem, exact: bool) -> CoreProblem:
    system_eq = ConstraintBlock(a=problem.system.a, b=problem.system.const)
    nonconvex = bool(exact and problem.lifts)
    if nonconvex:
        eq = ConstraintBlock.stack([system_eq, definition_block(problem)])
    else:
        eq = system_eq
    return CoreProblem(
        n=problem.n,
        obj_diag=problem.weights.copy(),
        obj_lin=np.zeros(problem.n),
        eq=eq,
        ineq=ConstraintBlock.empty(problem.n),
        convex=not nonconvex,
    )


def _initial_point(problem: EstimationProblem, options: SolverOptions,
                   x0: np.ndarray | None) -> np.ndarray:
    from .problem import flat_start, random_start  # local import to avoid cycle

    if x0 is not None:
        if options.init_mode not in ("warm",):
            raise DataError("explicit start point requires init_mode='warm'")
        return np.asarray(x0, dtype=float).copy()
    if options.init_mode == "random-in-box":
        if options.seed is None:
            raise DataError("random-in-box initialization needs a seed")
        return random_start(problem, options.seed)
    return flat_start(problem)


def solve(problem, mode: str, options: SolverOptions = SolverOptions(),
          x0: np.ndarray | None = None) -> SolveResult:
    """Solve an estimation problem (exact-nlp) or a relaxed problem (convex).

    In exact-nlp mode the result is a first-order KKT point (no global
    claim); in convex mode it is the global optimum of the convex program.
    """
    if mode == "exact-nlp":
        if not isinstance(problem, EstimationProblem):
            raise DataError("exact-nlp mode expects an EstimationProblem")
        core = estimation_core(problem, exact=True)
        start = _initial_point(problem, options, x0)
        return minimize(core, start, options, problem_tag=_tag(problem))
    if mode == "convex":
        if isinstance(problem, EstimationProblem):
            if problem.lifts:
                raise DataError(
                    "convex mode needs the bilinear equalities relaxed; "
                    "build the McCormick relaxation first"
                )
            core = estimation_core(problem, exact=False)
            start = _initial_point(problem, options, x0)
            return minimize(core, start, options, problem_tag=_tag(problem))
        if hasattr(problem, "as_core_problem"):
            core = problem.as_core_problem()
            if x0 is None:
                x0 = problem.start_point()
            return minimize(core, np.asarray(x0, dtype=float), options,
                            problem_tag=getattr(problem, "tag", ""))
        raise DataError("convex mode expects an EstimationProblem or RelaxedProblem")
    raise DataError(f"unknown solve mode '{mode}'")


def _tag(problem: EstimationProblem) -> str:
    return f"n={problem.n},m={problem.system.m},params={problem.space.n_params}"


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    feasibility: float
    complementarity: float
    violated_rows: tuple
    passed: bool


def kkt_check(problem, point: np.ndarray, tolerance: float = 1e-8,
              mode: str = "exact-nlp") -> KktReport:
    """Independent KKT audit of a candidate point.

    Feasibility is recomputed from the constraint functions; stationarity uses
    least-squares multipliers (minimum-norm residual of the dual equation), so
    the check does not trust any solver-reported duals.
    """
    if isinstance(problem, EstimationProblem):
        core = estimation_core(problem, exact=(mode == "exact-nlp"))
    elif hasattr(problem, "as_core_problem"):
        core = problem.as_core_problem()
    else:
        raise DataError("kkt_check expects an estimation or relaxed problem")
    x = np.asarray(point, dtype=float)
    if x.shape != (core.n,):
        raise DataError(f"point has dimension {x.shape}, expected ({core.n},)")

    ce = core.eq.value(x)
    feas = float(np.max(np.abs(ce))) if core.eq.m else 0.0
    violated = [("eq", int(r)) for r in np.flatnonzero(np.abs(ce) > tolerance)]
    active = np.zeros(0, dtype=int)
    if core.ineq.m:
        ci = core.ineq.value(x)
        viol = np.maximum(ci, 0.0)
        feas = max(feas, float(np.max(viol)))
        violated += [("ineq", int(r)) for r in np.flatnonzero(ci > tolerance)]
        active = np.flatnonzero(np.abs(ci) <= max(1e-6, 10 * tolerance))

    grad = core.gradient(x)
    jac_rows = []
    if core.eq.m:
        jac_rows.append(core.eq.jacobian(x))
    if active.size:
        jac_rows.append(core.ineq.jacobian(x)[active])
    if jac_rows:
        j_all = sp.vstack(jac_rows).tocsr()
        lam = spla.lsqr(j_all.T, -grad, atol=1e-14, btol=1e-14, iter_lim=2000)[0]
        stationarity = float(np.max(np.abs(grad + j_all.T @ lam)))
    else:
        stationarity = float(np.max(np.abs(grad))) if core.n else 0.0
    comp = 0.0
    return KktReport(
        stationarity=stationarity,
        feasibility=feas,
        complementarity=comp,
        violated_rows=tuple(violated),
        passed=(stationarity <= tolerance * 100 and feas <= tolerance),
    )
