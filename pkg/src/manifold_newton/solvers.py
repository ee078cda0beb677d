"""Newton iterations: RNM on the Grassmannian and the Stiefel manifold,
the spectrum-truncated variant (eigenvalues below a cutoff discarded), and
Newton's method on the Lagrangian saddle system.

Each run produces a :class:`SolverTrace` with one record per iterate.  The
Riemannian methods move along exact geodesics and stay feasible; the
Lagrange-multiplier method updates (C, eps) additively and is expected to
drift off the manifold between iterates.
"""

import json
import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import linalg
from .costs import HartreeFockCost, IntegralSet
from .linalg import ContractError
from .manifolds import (
    GRASSMANN,
    STIEFEL,
    FeasibilityError,
    ManifoldPoint,
    MetricMatrix,
    RiemannianHessian,
    TangentVector,
    build_tangent_basis,
    exp as manifold_exp,
    metric_inner,
    project,
)

logger = logging.getLogger(__name__)

RNM_GR = "rnm_gr"
RNM_ST = "rnm_st"
MRNM_ST = "mrnm_st"
NMLM = "nmlm"

METHODS = (RNM_GR, RNM_ST, MRNM_ST, NMLM)
MANIFOLD_FOR_METHOD = {RNM_GR: GRASSMANN, RNM_ST: STIEFEL, MRNM_ST: STIEFEL}

CONVERGED = "converged"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"


class NumericalFailure(RuntimeError):
    """Linear solve failed or produced an unusable step."""


class DegenerateStepError(NumericalFailure):
    """Spectrum truncation discarded every eigenvalue."""


@dataclass(frozen=True)
class SolverConfig:
    method: str = RNM_GR
    hessian_mode: str = "intrinsic"
    grad_tol: float = 1e-8
    max_iter: int = 50
    delta: float = 1e-8
    seed: int = 0
    record_spectrum: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.hessian_mode not in ("intrinsic", "extrinsic"):
            raise ValueError(f"unknown hessian_mode {self.hessian_mode!r}")
        if self.method == MRNM_ST and self.hessian_mode != "intrinsic":
            raise ValueError("spectrum truncation requires the intrinsic Hessian")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class SpectrumSummary:
    min_eigenvalue: float
    max_eigenvalue: float
    n_truncated: int


@dataclass(frozen=True)
class IterationRecord:
    index: int
    value: float
    grad_norm: float
    constraint_violation: float
    step_norm: float | None
    spectrum: SpectrumSummary | None = None
    eps_asymmetry: float | None = None
    wall_time_s: float = 0.0


@dataclass
class SolverTrace:
    config: SolverConfig
    problem_id: str = ""
    initial_guess: str = "user"
    records: list = field(default_factory=list)
    status: str = MAX_ITER
    message: str = ""
    final_C: np.ndarray | None = None
    final_eps: np.ndarray | None = None
    wall_time_s: float = 0.0

    @property
    def converged(self):
        return self.status == CONVERGED

    @property
    def n_iter(self):
        return self.records[-1].index if self.records else 0

    @property
    def final_value(self):
        return self.records[-1].value if self.records else float("nan")

    @property
    def final_grad_norm(self):
        return self.records[-1].grad_norm if self.records else float("nan")

    @property
    def grad_norms(self):
        return [r.grad_norm for r in self.records]

    def summary_row(self):
        return {
            "molecule_id": self.problem_id,
            "method": self.config.method,
            "hessian_mode": self.config.hessian_mode,
            "delta": self.config.delta,
            "status": self.status,
            "n_iter": self.n_iter,
            "final_value": self.final_value,
            "final_grad_norm": self.final_grad_norm,
            "wall_time_s": self.wall_time_s,
        }

    def to_jsonl(self):
        """Line-oriented JSON: header, one line per iteration, footer."""
        header = {
            "type": "header",
            "problem_id": self.problem_id,
            "initial_guess": self.initial_guess,
            **asdict(self.config),
        }
        lines = [json.dumps(header)]
        for rec in self.records:
            entry = {"type": "iteration", **asdict(rec)}
            lines.append(json.dumps(entry))
        footer = {
            "type": "footer",
            "status": self.status,
            "message": self.message,
            "n_iter": self.n_iter,
            "final_value": self.final_value,
            "final_grad_norm": self.final_grad_norm,
            "wall_time_s": self.wall_time_s,
            "final_C": None if self.final_C is None else self.final_C.tolist(),
            "final_eps": None if self.final_eps is None else self.final_eps.tolist(),
        }
        lines.append(json.dumps(footer))
        return "\n".join(lines) + "\n"


class IntrinsicNewtonSystem:
    """Newton's equation in an orthonormal tangent basis.

    Assembles the dim-by-dim matrix <v_a, Hess(v_b)> and the gradient
    coordinates <grad, v_a>; solutions are mapped back to d-by-N tangent
    matrices through the basis.
    """

    def __init__(self, cost, base, basis):
        C = base.C
        G = cost.euclidean_gradient(C)
        Hbar = cost.euclidean_hessian_matrix(C)
        hess = RiemannianHessian(base, G, Hbar)
        self.base = base
        self.basis = basis
        self.grad = project(base, base.metric.inv @ G)
        images = [hess.apply(v) for v in basis.vectors]
        dim = len(basis)
        H = np.empty((dim, dim))
        for a, va in enumerate(basis.vectors):
            Sva = base.metric.S @ va
            for b in range(dim):
                H[a, b] = float(np.tensordot(Sva, images[b]))
        self.H = H
        self.grad_coords = np.array(
            [metric_inner(base, self.grad, v) for v in basis.vectors]
        )

    @property
    def grad_norm(self):
        return self.base.metric.norm(self.grad)

    def eigenvalues(self):
        w, _ = linalg.sym_eigen(self.H)
        return w

    def to_tangent(self, coords):
        V = np.zeros_like(self.base.C)
        for x, v in zip(coords, self.basis.vectors):
            V += x * v
        return V

    def solve(self):
        try:
            coords = np.linalg.solve(self.H, -self.grad_coords)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"singular intrinsic Hessian: {exc}") from exc
        if not np.all(np.isfinite(coords)):
            raise NumericalFailure("intrinsic Newton solve produced non-finite step")
        return coords

    def solve_truncated(self, delta):
        """Solve in the span of eigenvectors with eigenvalue > delta.

        Returns (coords, spectrum summary); never fails on a singular
        Hessian, but errors when no eigenvalue exceeds the cutoff.
        """
        w, U = linalg.sym_eigen(self.H)
        keep = w > delta
        summary = SpectrumSummary(
            min_eigenvalue=float(w[-1]),
            max_eigenvalue=float(w[0]),
            n_truncated=int(np.sum(~keep)),
        )
        if not np.any(keep):
            raise DegenerateStepError(
                f"all {w.size} eigenvalues are at or below delta = {delta:g}"
            )
        proj_grad = U[:, keep].T @ self.grad_coords
        coords = U[:, keep] @ (-proj_grad / w[keep])
        return coords, summary


def newton_step_intrinsic(cost, base, basis):
    """Newton step from the intrinsic-basis system; errors if singular."""
    system = IntrinsicNewtonSystem(cost, base, basis)
    return TangentVector(system.to_tangent(system.solve()), base, tol=1e-8)


def newton_step_truncated(cost, base, basis, delta):
    """Spectrum-truncated Newton step (eigenvalues <= delta discarded)."""
    system = IntrinsicNewtonSystem(cost, base, basis)
    coords, _ = system.solve_truncated(delta)
    return TangentVector(system.to_tangent(coords), base, tol=1e-8)


def extrinsic_hessian_matrix(cost, base):
    """Dense dN-by-dN matrix of the Riemannian Hessian in the canonical
    basis of the ambient matrix space, built from Kronecker/permutation
    kernels."""
    C, S, Sinv = base.C, base.metric.S, base.metric.inv
    d, n = C.shape
    G = cost.euclidean_gradient(C)
    Hbar = cost.euclidean_hessian_matrix(C)
    CtS = C.T @ S
    eye_d, eye_n = np.eye(d), np.eye(n)
    if base.manifold == GRASSMANN:
        proj = eye_d - C @ CtS
        return np.kron(eye_n, proj @ Sinv) @ Hbar - np.kron(G.T @ C, eye_d)
    sym_CtG = linalg.sym(C.T @ G)
    proj = 0.5 * (
        np.kron(eye_n, 2.0 * eye_d - C @ CtS)
        - linalg.perm_columns(np.kron(CtS, C), d, n)
    )
    inner = np.kron(eye_n, Sinv) @ Hbar - np.kron(sym_CtG, eye_d)
    return proj @ inner


def tangency_constraint_matrix(base):
    """h(C) with ker h(C) = the tangent space, acting on vec(mu)."""
    C, S = base.C, base.metric.S
    d, n = C.shape
    CtS = C.T @ S
    h = np.kron(np.eye(n), CtS)
    if base.manifold == STIEFEL:
        h = h + linalg.perm_columns(np.kron(CtS, np.eye(n)), d, n)
    return h


def newton_step_extrinsic(cost, base, residual_tol=1e-8):
    """Newton step from the augmented (Hessian over constraint) system,
    solved by least squares; the stacked system is overdetermined but
    consistent when the tangent-restricted Hessian is invertible."""
    C = base.C
    d, n = C.shape
    G = cost.euclidean_gradient(C)
    grad = project(base, base.metric.inv @ G)
    H = extrinsic_hessian_matrix(cost, base)
    hC = tangency_constraint_matrix(base)
    A = np.vstack([H, hC])
    b = -np.concatenate([linalg.vec(grad), np.zeros(hC.shape[0])])
    sol, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
    if not np.all(np.isfinite(sol)):
        raise NumericalFailure("extrinsic Newton solve produced non-finite step")
    residual = np.linalg.norm(A @ sol - b)
    if residual > residual_tol * max(1.0, np.linalg.norm(b)):
        raise NumericalFailure(
            f"augmented Newton system is inconsistent (residual {residual:.3e})"
        )
    return TangentVector(linalg.unvec(sol, d, n), base, tol=1e-9)


def riemannian_grad_norm(cost, base):
    G = cost.euclidean_gradient(base.C)
    return base.metric.norm(project(base, base.metric.inv @ G))


def run_rnm(cost, x0, config, problem_id="", initial_guess="user"):
    """Riemannian Newton iteration (plain or spectrum-truncated).

    Iterates until the Riemannian gradient norm drops below
    ``config.grad_tol`` or ``config.max_iter`` steps were taken; a failed
    step ends the run with status ``numerical_failure`` and the partial
    trace retained.
    """
    if config.method not in MANIFOLD_FOR_METHOD:
        raise ValueError(f"run_rnm cannot run method {config.method!r}")
    manifold = MANIFOLD_FOR_METHOD[config.method]
    x = x0.with_manifold(manifold)
    trace = SolverTrace(config=config, problem_id=problem_id,
                        initial_guess=initial_guess)
    t_run = time.perf_counter()
    for k in range(config.max_iter + 1):
        t_iter = time.perf_counter()
        value = cost.value(x.C)
        G = cost.euclidean_gradient(x.C)
        grad = project(x, x.metric.inv @ G)
        gn = x.metric.norm(grad)
        feas = x.feasibility_violation
        if gn < config.grad_tol:
            trace.records.append(IterationRecord(
                index=k, value=value, grad_norm=gn, constraint_violation=feas,
                step_norm=None, wall_time_s=time.perf_counter() - t_iter))
            trace.status = CONVERGED
            break
        if k == config.max_iter:
            trace.records.append(IterationRecord(
                index=k, value=value, grad_norm=gn, constraint_violation=feas,
                step_norm=None, wall_time_s=time.perf_counter() - t_iter))
            trace.status = MAX_ITER
            break
        spectrum = None
        try:
            if config.hessian_mode == "extrinsic":
                step = newton_step_extrinsic(cost, x)
            else:
                basis = build_tangent_basis(x, seed=config.seed)
                system = IntrinsicNewtonSystem(cost, x, basis)
                if config.method == MRNM_ST:
                    coords, spectrum = system.solve_truncated(config.delta)
                else:
                    coords = system.solve()
                    if config.record_spectrum:
                        w = system.eigenvalues()
                        spectrum = SpectrumSummary(
                            min_eigenvalue=float(w[-1]),
                            max_eigenvalue=float(w[0]),
                            n_truncated=int(np.sum(w <= config.delta)),
                        )
                step = TangentVector(system.to_tangent(coords), x, tol=1e-8)
            step_norm = x.metric.norm(step.V)
            x_next = manifold_exp(x, step)
        except (NumericalFailure, FeasibilityError, ContractError,
                np.linalg.LinAlgError) as exc:
            trace.records.append(IterationRecord(
                index=k, value=value, grad_norm=gn, constraint_violation=feas,
                step_norm=None, spectrum=spectrum,
                wall_time_s=time.perf_counter() - t_iter))
            trace.status = NUMERICAL_FAILURE
            trace.message = str(exc)
            logger.info("%s failed at iteration %d: %s", config.method, k, exc)
            break
        trace.records.append(IterationRecord(
            index=k, value=value, grad_norm=gn, constraint_violation=feas,
            step_norm=step_norm, spectrum=spectrum,
            wall_time_s=time.perf_counter() - t_iter))
        x = x_next
    trace.final_C = x.C.copy()
    trace.wall_time_s = time.perf_counter() - t_run
    return trace


def lagrangian_gradient(cost, metric, C, eps):
    """Stacked gradient of the Lagrangian f(C) - tr(eps^T (C^T S C - Id)).

    Returns (C-block, constraint residual); the C-block is
    grad f - S C (eps + eps^T), exact for unconstrained eps and equal to
    the symmetric-eps form grad f - 2 S C eps on symmetric trajectories.
    """
    S = metric.S
    G = cost.euclidean_gradient(C)
    R = C.T @ S @ C - np.eye(C.shape[1])
    return G - S @ C @ (eps + eps.T), R


def constraint_jacobian(metric, C):
    """Jacobian of C -> C^T S C as a map on vec(C)."""
    d, n = C.shape
    CtS = C.T @ metric.S
    return np.kron(np.eye(n), CtS) + linalg.perm_columns(
        np.kron(CtS, np.eye(n)), d, n)


def run_nmlm(cost, x0, config, eps0=None, problem_id="", initial_guess="user"):
    """Newton's method on the saddle system of the Lagrangian.

    The iterate is the pair (C, eps); updates are additive, so C is allowed
    to leave the manifold.  Convergence is measured by the Euclidean norm
    of the full stacked Lagrangian gradient.  ``eps0 = None`` initializes
    the multipliers from the converged-point identity eps = C^T grad f / 2.
    """
    metric = x0.metric
    C = x0.C.copy()
    d, n = C.shape
    if eps0 is None:
        eps = 0.5 * C.T @ cost.euclidean_gradient(C)
    else:
        eps = np.asarray(eps0, dtype=float).copy()
        if eps.shape != (n, n):
            raise linalg.DimensionError(f"eps0 must be {n}x{n}, got {eps.shape}")
    trace = SolverTrace(config=config, problem_id=problem_id,
                        initial_guess=initial_guess)
    t_run = time.perf_counter()
    for k in range(config.max_iter + 1):
        t_iter = time.perf_counter()
        value = cost.value(C)
        grad_C, R = lagrangian_gradient(cost, metric, C, eps)
        stacked = np.concatenate([linalg.vec(grad_C), -linalg.vec(R)])
        gn = float(np.linalg.norm(stacked))
        feas = float(np.linalg.norm(R))
        eps_asym = float(np.linalg.norm(eps - eps.T))
        record = dict(index=k, value=value, grad_norm=gn,
                      constraint_violation=feas, eps_asymmetry=eps_asym)
        if gn < config.grad_tol:
            trace.records.append(IterationRecord(
                **record, step_norm=None,
                wall_time_s=time.perf_counter() - t_iter))
            trace.status = CONVERGED
            break
        if k == config.max_iter:
            trace.records.append(IterationRecord(
                **record, step_norm=None,
                wall_time_s=time.perf_counter() - t_iter))
            trace.status = MAX_ITER
            break
        try:
            Hbar = cost.euclidean_hessian_matrix(C)
            J = constraint_jacobian(metric, C)
            K = np.zeros((d * n + n * n, d * n + n * n))
            K[: d * n, : d * n] = Hbar - np.kron(eps + eps.T, metric.S)
            K[: d * n, d * n :] = -J.T
            K[d * n :, : d * n] = -J
            # rows (i,j) and (j,i) of J coincide (C^T S C is symmetric), so
            # K always carries the skew-eps directions in its nullspace; the
            # system is consistent there and the minimum-norm solution adds
            # no skew component to eps.
            sol, _, _, _ = np.linalg.lstsq(K, -stacked, rcond=None)
            if not np.all(np.isfinite(sol)):
                raise NumericalFailure("Lagrangian Newton step is non-finite")
            residual = np.linalg.norm(K @ sol + stacked)
            if residual > 1e-8 * max(1.0, gn):
                raise NumericalFailure(
                    f"singular Lagrangian system (residual {residual:.3e})")
        except (np.linalg.LinAlgError, NumericalFailure) as exc:
            trace.records.append(IterationRecord(
                **record, step_norm=None,
                wall_time_s=time.perf_counter() - t_iter))
            trace.status = NUMERICAL_FAILURE
            trace.message = str(exc)
            logger.info("nmlm failed at iteration %d: %s", k, exc)
            break
        step_C = linalg.unvec(sol[: d * n], d, n)
        step_eps = linalg.unvec(sol[d * n :], n, n)
        trace.records.append(IterationRecord(
            **record, step_norm=float(np.linalg.norm(sol)),
            wall_time_s=time.perf_counter() - t_iter))
        C = C + step_C
        eps = eps + step_eps
    trace.final_C = C.copy()
    trace.final_eps = eps.copy()
    trace.wall_time_s = time.perf_counter() - t_run
    return trace


def run(cost, x0, config, eps0=None, problem_id="", initial_guess="user"):
    """Dispatch to the Riemannian or Lagrangian iteration per config."""
    if config.method == NMLM:
        return run_nmlm(cost, x0, config, eps0=eps0, problem_id=problem_id,
                        initial_guess=initial_guess)
    return run_rnm(cost, x0, config, problem_id=problem_id,
                   initial_guess=initial_guess)


def gram_schmidt_s(C, S):
    """S-orthonormalize the columns of C (two-pass modified Gram-Schmidt)."""
    C = np.array(C, dtype=float)
    for j in range(C.shape[1]):
        v = C[:, j]
        for _ in range(2):
            for i in range(j):
                v = v - (C[:, i] @ S @ v) * C[:, i]
        norm = np.sqrt(v @ S @ v)
        if norm < 1e-12:
            raise ContractError(f"column {j} is S-degenerate")
        C[:, j] = v / norm
    return C


def initial_guess(source, kind="core_hamiltonian", *, metric=None, n=None,
                  C=None, orthonormalize=False):
    """Build a feasible starting point.

    kinds:
      core_hamiltonian -- lowest-n eigenvectors of (h, S); needs an
                          IntegralSet (or HartreeFockCost) as source.
      first_columns    -- S-orthonormalization of the first n canonical
                          basis vectors (the identity block when S = Id).
      user_file        -- a caller-supplied C (pass ``C=``); rejected when
                          infeasible beyond 1e-8 unless ``orthonormalize``.
    """
    if isinstance(source, HartreeFockCost):
        source = source.ints
    if kind == "core_hamiltonian":
        if not isinstance(source, IntegralSet):
            raise TypeError("core_hamiltonian guess needs an IntegralSet")
        metric = metric or MetricMatrix(source.S)
        _, V = linalg.gen_eigen(source.h, metric.S)
        return ManifoldPoint(V[:, : source.n_occ], metric)
    if kind == "first_columns":
        if metric is None:
            if isinstance(source, IntegralSet):
                metric = MetricMatrix(source.S)
            elif isinstance(source, MetricMatrix):
                metric = source
            else:
                metric = MetricMatrix(np.asarray(source, dtype=float))
        if n is None:
            if not isinstance(source, IntegralSet):
                raise ValueError("first_columns guess needs n")
            n = source.n_occ
        return ManifoldPoint(metric.o_matrix[:, :n], metric)
    if kind == "user_file":
        if C is None:
            raise ValueError("user_file guess needs the coefficient matrix")
        if metric is None:
            if isinstance(source, IntegralSet):
                metric = MetricMatrix(source.S)
            elif isinstance(source, MetricMatrix):
                metric = source
            else:
                raise ValueError("user_file guess needs a metric")
        C = np.asarray(C, dtype=float)
        violation = np.linalg.norm(C.T @ metric.S @ C - np.eye(C.shape[1]))
        if orthonormalize:
            C = gram_schmidt_s(C, metric.S)
            if violation > 1e-8:
                logger.warning(
                    "user guess had feasibility violation %.3e; orthonormalized",
                    violation)
        elif violation > 1e-8:
            raise ContractError(
                f"user guess is infeasible (violation {violation:.3e}); "
                "pass orthonormalize=True to project it")
        return ManifoldPoint(C, metric)
    raise ValueError(f"unknown initial guess kind {kind!r}")
