"""Generalized Stiefel manifold St(d, N; S) and Grassmannian Gr(N, d; S).

Points are d-by-N matrices C with C^T S C = Id for an SPD metric matrix S;
a Grassmann point is a Stiefel representative of its column space.  The
metric on both manifolds is <A, B> = tr(A^T S B).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .linalg import ContractError, DimensionError

logger = logging.getLogger(__name__)

STIEFEL = "stiefel"
GRASSMANN = "grassmann"

FEAS_TOL = 1e-10
FEAS_HARD_TOL = 1e-8


class FeasibilityError(ValueError):
    """Point or exponential left the manifold beyond the hard tolerance."""


class MetricMatrix:
    """SPD matrix S defining the inner product, with cached factorizations.

    Caches the Cholesky factor L (S = L L^T), the inverse, and the
    congruence transform O = L^{-T} satisfying O^T S O = Id, which is used
    by the Grassmann exponential.
    """

    def __init__(self, S):
        S = np.asarray(S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DimensionError(f"S must be square, got shape {S.shape}")
        scale = np.linalg.norm(S)
        if np.linalg.norm(S - S.T) > 1e-12 * max(scale, 1.0):
            raise ContractError("S must be symmetric")
        self.S = 0.5 * (S + S.T)
        try:
            self.cholesky = np.linalg.cholesky(self.S)
        except np.linalg.LinAlgError as exc:
            raise ContractError("S is not positive-definite") from exc
        self.inv = np.linalg.inv(self.S)
        # O = L^{-T}: O^T S O = L^{-1} L L^T L^{-T} = Id
        self.o_matrix = np.linalg.inv(self.cholesky).T
        self.o_inv = self.cholesky.T

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))

    @property
    def dim(self):
        return self.S.shape[0]

    def inner(self, A, B):
        """<A, B> = tr(A^T S B)."""
        return float(np.tensordot(A, self.S @ B))

    def norm(self, A):
        return float(np.sqrt(max(self.inner(A, A), 0.0)))


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    """Feasible point C on the Stiefel manifold or a Grassmann representative."""

    C: np.ndarray
    metric: MetricMatrix
    manifold: str = STIEFEL

    def __post_init__(self):
        object.__setattr__(self, "C", np.asarray(self.C, dtype=float))
        if self.manifold not in (STIEFEL, GRASSMANN):
            raise ValueError(f"unknown manifold tag {self.manifold!r}")
        if self.C.ndim != 2 or self.C.shape[0] != self.metric.dim:
            raise DimensionError(
                f"C has shape {self.C.shape}, metric dimension is {self.metric.dim}"
            )
        res = self.feasibility_violation
        if res > FEAS_HARD_TOL:
            raise FeasibilityError(f"C^T S C - Id has norm {res:.3e}")
        if res > FEAS_TOL:
            logger.warning("point feasibility residual %.3e above %.0e", res, FEAS_TOL)

    @property
    def d(self):
        return self.C.shape[0]

    @property
    def n(self):
        return self.C.shape[1]

    @property
    def feasibility_violation(self):
        CtSC = self.C.T @ self.metric.S @ self.C
        return float(np.linalg.norm(CtSC - np.eye(self.n)))

    def with_manifold(self, manifold):
        return ManifoldPoint(self.C, self.metric, manifold)


@dataclass(frozen=True, eq=False)
class TangentVector:
    """d-by-N matrix in the tangent space at ``base``."""

    V: np.ndarray
    base: ManifoldPoint
    tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, dtype=float))
        if self.V.shape != self.base.C.shape:
            raise DimensionError(
                f"tangent shape {self.V.shape} does not match point {self.base.C.shape}"
            )
        res = tangency_violation(self.base, self.V)
        if res > self.tol * max(1.0, float(np.linalg.norm(self.V))):
            raise ContractError(
                f"vector is not tangent ({self.base.manifold}): residual {res:.3e}"
            )

    @property
    def manifold(self):
        return self.base.manifold

    def norm(self):
        return self.base.metric.norm(self.V)


def tangency_violation(base, V):
    """Constraint residual of V against the tangent space at ``base``."""
    CtSV = base.C.T @ base.metric.S @ V
    if base.manifold == GRASSMANN:
        return float(np.linalg.norm(CtSV))
    return float(np.linalg.norm(CtSV + CtSV.T))


def metric_inner(base, A, B):
    """Riemannian inner product tr(A^T S B) at ``base``."""
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {B.shape}")
    return base.metric.inner(A, B)


def project_stiefel(base, M):
    """Project M onto the Stiefel tangent space: M - C sym(C^T S M)."""
    C = base.C
    return M - C @ linalg.sym(C.T @ base.metric.S @ M)


def project_grassmann(base, M):
    """Project M onto the Grassmann tangent space: (Id - C C^T S) M."""
    C = base.C
    return M - C @ (C.T @ (base.metric.S @ M))


def project(base, M):
    if base.manifold == GRASSMANN:
        return project_grassmann(base, M)
    return project_stiefel(base, M)


def riemannian_gradient(base, euclidean_grad):
    """Riemannian gradient from the array of partial derivatives.

    The gradient w.r.t. the metric tr(A^T S B) is the tangent projection of
    S^{-1} times the Euclidean partial-derivative array, so that
    Df(C)(V) = <V, grad> for every tangent V.
    """
    G = np.asarray(euclidean_grad, dtype=float)
    return TangentVector(project(base, base.metric.inv @ G), base)


class RiemannianHessian:
    """Riemannian Hessian operator at a fixed point, built from the
    Euclidean gradient and dense Euclidean Hessian of the cost extension.

    Stiefel:    H(V) = proj_St(S^{-1} Hbar(V) - V sym(C^T G))
    Grassmann:  H(V) = proj_Gr(S^{-1} Hbar(V)) - V (C^T G)

    where Hbar(V) = unvec(Hbar @ vec(V)).
    """

    def __init__(self, base, euclidean_grad, euclidean_hessian_matrix):
        self.base = base
        self.G = np.asarray(euclidean_grad, dtype=float)
        self.Hbar = np.asarray(euclidean_hessian_matrix, dtype=float)
        self.CtG = base.C.T @ self.G
        self._sym_CtG = 0.5 * (self.CtG + self.CtG.T)

    def apply(self, V):
        base = self.base
        d, n = base.C.shape
        EH = linalg.unvec(self.Hbar @ linalg.vec(V), d, n)
        W = base.metric.inv @ EH
        if base.manifold == GRASSMANN:
            return project_grassmann(base, W) - V @ self.CtG
        return project_stiefel(base, W - V @ self._sym_CtG)

    def apply_to_basis(self, vectors):
        return [self.apply(V) for V in vectors]


def _tangent_array(base, V, constraint):
    """Unwrap a TangentVector or assert tangency of a raw array; inputs are
    never silently projected."""
    if isinstance(V, TangentVector):
        return V.V
    V = np.asarray(V, dtype=float)
    res = constraint(base, V)
    if res > 1e-8 * max(1.0, float(np.linalg.norm(V))):
        raise ContractError(f"exponential input is not tangent "
                            f"(residual {res:.3e})")
    return V


def exp_stiefel(base, V):
    """Geodesic endpoint on the Stiefel manifold for tangent V at base."""
    V = _tangent_array(base, V, lambda b, W: float(np.linalg.norm(
        b.C.T @ b.metric.S @ W + W.T @ b.metric.S @ b.C)))
    C, S = base.C, base.metric.S
    n = base.n
    A = C.T @ S @ V
    B = V.T @ S @ V
    block = np.block([[A, -B], [np.eye(n), A]])
    E = linalg.expm(block)[:, :n]
    out = np.hstack([C, V]) @ E @ linalg.expm(-A)
    if not np.all(np.isfinite(out)):
        raise FeasibilityError(
            f"Stiefel exponential overflowed (step norm {base.metric.norm(V):.3e})"
        )
    try:
        return ManifoldPoint(out, base.metric, base.manifold)
    except FeasibilityError as exc:
        raise FeasibilityError(
            f"Stiefel exponential drifted off the manifold "
            f"(step norm {base.metric.norm(V):.3e}): {exc}"
        ) from None


def exp_grassmann(base, V, O=None):
    """Geodesic endpoint on the Grassmannian for horizontal V at base.

    O is any invertible matrix with O^T S O = Id; defaults to the inverse
    transposed Cholesky factor cached on the metric.  Steps whose singular
    values exceed pi/2 pass the cut locus: the endpoint is still evaluated
    but the geodesic is no longer the unique shortest one.
    """
    V = _tangent_array(base, V, lambda b, W: float(np.linalg.norm(
        b.C.T @ (b.metric.S @ W))))
    metric = base.metric
    if O is None:
        O = metric.o_matrix
        O_inv = metric.o_inv
    else:
        O_inv = np.linalg.inv(O)
    U, D, Vh = linalg.thin_svd(O_inv @ V)
    out = (base.C @ Vh.T @ np.diag(np.cos(D)) + O @ U @ np.diag(np.sin(D))) @ Vh
    return ManifoldPoint(out, metric, base.manifold)


def exp(base, V):
    if base.manifold == GRASSMANN:
        return exp_grassmann(base, V)
    return exp_stiefel(base, V)


@dataclass
class TangentBasis:
    """Orthonormal basis of the tangent space at ``base``.

    For the Grassmannian the elements are C_perp E_kl with the row index
    running fastest; for the Stiefel manifold the skew block
    C asym(sqrt(2) E_ij) (lower triangle, column-major order) comes first,
    followed by the Grassmann block.
    """

    base: ManifoldPoint
    manifold: str
    vectors: list = field(repr=False)
    c_perp: np.ndarray = field(repr=False)
    seed: int = 0

    def __len__(self):
        return len(self.vectors)

    def __getitem__(self, i):
        return self.vectors[i]

    @property
    def dim(self):
        return len(self.vectors)

    @property
    def matrix(self):
        """dN-by-dim matrix whose columns are vec of the basis elements."""
        return np.column_stack([linalg.vec(v) for v in self.vectors])

    @property
    def skew_block_size(self):
        n = self.base.n
        return n * (n - 1) // 2 if self.manifold == STIEFEL else 0


def manifold_dimension(d, n, manifold):
    if manifold == GRASSMANN:
        return n * (d - n)
    return n * (d - n) + n * (n - 1) // 2


def build_tangent_basis(base, manifold=None, seed=0):
    """Orthonormal tangent basis at ``base`` for the requested manifold."""
    manifold = manifold or base.manifold
    C = base.C
    d, n = C.shape
    c_perp = linalg.s_orthonormal_complement(C, base.metric.S, seed)
    vectors = []
    if manifold == STIEFEL:
        inv_sqrt2 = 1.0 / np.sqrt(2.0)
        for j in range(n - 1):
            for i in range(j + 1, n):
                v = np.zeros((d, n))
                v[:, j] = C[:, i] * inv_sqrt2
                v[:, i] = -C[:, j] * inv_sqrt2
                vectors.append(v)
    for l in range(n):
        for k in range(d - n):
            v = np.zeros((d, n))
            v[:, l] = c_perp[:, k]
            vectors.append(v)
    assert len(vectors) == manifold_dimension(d, n, manifold)
    return TangentBasis(base=base.with_manifold(manifold), manifold=manifold,
                        vectors=vectors, c_perp=c_perp, seed=seed)
