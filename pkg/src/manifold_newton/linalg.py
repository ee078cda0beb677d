"""Dense matrix kernels: symmetrization, Kronecker/vec machinery, spectral
decompositions, the matrix exponential and metric-orthonormal completions.

All matrices are float64 numpy arrays.  ``vec`` stacks columns (Fortran
order), so a d-by-N matrix entry (i, j) lands at flat index i + j*d.
"""

import numpy as np
import scipy.linalg

__all__ = [
    "sym",
    "asym",
    "kron",
    "vec",
    "unvec",
    "perm_columns",
    "thin_svd",
    "sym_eigen",
    "gen_eigen",
    "expm",
    "s_orthonormal_complement",
    "DimensionError",
    "ContractError",
]


class DimensionError(ValueError):
    """Input shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """Input violates a precondition (asymmetry, indefiniteness, ...)."""


def _as_matrix(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ContractError(f"{name} contains non-finite entries")
    return M


def _require_square(M, name="M"):
    M = _as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def sym(M):
    """Symmetric part (M + M^T)/2."""
    M = _require_square(M)
    return 0.5 * (M + M.T)


def asym(M):
    """Skew-symmetric part (M - M^T)/2."""
    M = _require_square(M)
    return 0.5 * (M - M.T)


def kron(A, B):
    """Kronecker product with blocks A[i, j] * B."""
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    return np.kron(A, B)


def vec(M):
    """Stack the columns of M into a single vector."""
    M = _as_matrix(M)
    return M.flatten(order="F")


def unvec(v, m, n):
    """Inverse of :func:`vec` for an m-by-n matrix."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != m * n:
        raise DimensionError(f"vector of length {v.size} cannot fill a {m}x{n} matrix")
    return v.reshape((m, n), order="F")


def perm_column_order(d, n):
    """Column order such that M[:, order] @ vec(mu) == M @ vec(mu.T).

    ``M`` has d*n columns indexed like vec of an n-by-d matrix (mu.T); the
    reordered matrix acts on vec of the d-by-n matrix mu directly.
    """
    return np.arange(d * n).reshape(d, n).T.ravel()


def perm_columns(M, d, n):
    """Permute the columns of M so that M @ vec(mu.T) == perm_columns(M) @ vec(mu)."""
    M = _as_matrix(M)
    if M.shape[1] != d * n:
        raise DimensionError(f"M has {M.shape[1]} columns, expected d*n = {d * n}")
    return M[:, perm_column_order(d, n)]


def thin_svd(M):
    """Thin SVD returning (U, D, V) with M = U @ diag(D) @ V.

    Note V is returned so that the product U*D*V (V not transposed)
    reconstructs M; D is the vector of singular values, descending.
    """
    M = _as_matrix(M)
    d, n = M.shape
    if n > d:
        raise DimensionError(f"thin_svd needs N <= d, got shape {M.shape}")
    U, D, Vh = np.linalg.svd(M, full_matrices=False)
    return U, D, Vh


def sym_eigen(M, asym_tol=1e-10):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns (eigenvalues, eigenvectors); column i of the eigenvector matrix
    pairs with eigenvalue i.  The input is symmetrized internally but must
    already be symmetric to within ``asym_tol`` (relative).  Ties keep the
    backend's ordering; callers must not rely on the eigenvector choice
    inside a degenerate eigenspace.
    """
    M = _require_square(M)
    scale = np.linalg.norm(M)
    if scale > 0 and np.linalg.norm(M - M.T) > asym_tol * scale:
        raise ContractError("matrix is not symmetric within tolerance")
    w, U = np.linalg.eigh(sym(M))
    return w[::-1].copy(), U[:, ::-1].copy()


def gen_eigen(A, S):
    """Solve A v = lambda S v for symmetric A and SPD S.

    Eigenvalues ascending (lowest first); eigenvectors S-orthonormal,
    v_i^T S v_j = delta_ij.
    """
    A = _require_square(A, "A")
    S = _require_square(S, "S")
    if A.shape != S.shape:
        raise DimensionError("A and S must have the same shape")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise ContractError("S is not positive-definite") from exc
    w, V = scipy.linalg.eigh(sym(A), sym(S))
    return w, V


def expm(M):
    """Dense matrix exponential (scaling-and-squaring Pade)."""
    M = _require_square(M)
    return scipy.linalg.expm(M)


def s_orthonormal_complement(C, S, seed, max_redraws=10):
    """Complete C to an S-orthonormal basis of R^d.

    C is d-by-N with C^T S C = Id.  Returns C_perp (d-by-(d-N)) such that
    [C C_perp]^T S [C C_perp] = Id, built by Gram-Schmidt in the S-inner
    product seeded with the columns of C followed by random draws.  The
    same seed yields a bit-identical completion.
    """
    C = _as_matrix(C, "C")
    S = _require_square(S, "S")
    d, n = C.shape
    feas = np.linalg.norm(C.T @ S @ C - np.eye(n))
    if feas > 1e-10:
        raise ContractError(f"C is not S-orthonormal (residual {feas:.2e})")
    rng = np.random.default_rng(seed)
    basis = [C[:, j] for j in range(n)]
    cols = []
    while len(cols) < d - n:
        for attempt in range(max_redraws + 1):
            v = rng.standard_normal(d)
            for b in basis:
                v = v - (b @ S @ v) * b
            norm = np.sqrt(v @ S @ v)
            if norm > 1e-8:
                break
        else:
            raise ContractError("could not draw an independent column")
        v = v / norm
        # second orthogonalization pass for numerical hygiene
        for b in basis:
            v = v - (b @ S @ v) * b
        v = v / np.sqrt(v @ S @ v)
        basis.append(v)
        cols.append(v)
    return np.column_stack(cols) if cols else np.zeros((d, 0))
