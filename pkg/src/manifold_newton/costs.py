"""Cost functions: the Hartree-Fock energy from ingested integrals and a
Brockett-type trace cost with a closed-form minimizer.

Both costs are invariant under right-multiplication of C by an orthogonal
matrix, so they descend to the Grassmannian.  A cost object exposes the
value, the Euclidean gradient (array of partial derivatives), and the
Euclidean Hessian as both a dense dN-by-dN matrix and an operator apply.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .linalg import ContractError, DimensionError

# the 8 index permutations leaving a real two-electron tensor invariant,
# in the convention g[i,j,k,l] = (psi_i(1) psi_j(2) | r12^-1 | psi_k(1) psi_l(2))
G_SYMMETRY_PERMS = (
    (0, 1, 2, 3),
    (2, 1, 0, 3),  # swap the two r1 indices
    (0, 3, 2, 1),  # swap the two r2 indices
    (2, 3, 0, 1),
    (1, 0, 3, 2),  # exchange the two electrons
    (3, 0, 1, 2),
    (1, 2, 3, 0),
    (3, 2, 1, 0),
)


@dataclass(frozen=True, eq=False)
class IntegralSet:
    """One- and two-electron integral data defining a Hartree-Fock problem.

    ``g`` uses the convention g[i,j,k,l] with orbitals i,k on the first
    electron and j,l on the second.  ``n_occ`` doubly-occupied orbitals
    describe a system of 2*n_occ electrons.
    """

    d: int
    n_occ: int
    S: np.ndarray
    h: np.ndarray
    g: np.ndarray
    e_nuc: float = 0.0

    def __post_init__(self):
        for name in ("S", "h", "g"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def validate(self, tol=1e-10):
        d = self.d
        if not (1 <= self.n_occ <= d):
            raise ContractError(f"n_occ must be in [1, {d}], got {self.n_occ}")
        if self.S.shape != (d, d) or self.h.shape != (d, d):
            raise DimensionError("S and h must be d-by-d")
        if self.g.shape != (d, d, d, d):
            raise DimensionError("g must be d^4")
        if np.linalg.norm(self.S - self.S.T) > tol * max(1.0, np.linalg.norm(self.S)):
            raise ContractError("overlap matrix S is not symmetric")
        try:
            np.linalg.cholesky(self.S)
        except np.linalg.LinAlgError as exc:
            raise ContractError("overlap matrix S is not positive-definite") from exc
        if np.linalg.norm(self.h - self.h.T) > tol * max(1.0, np.linalg.norm(self.h)):
            raise ContractError("one-electron matrix h is not symmetric")
        scale = max(1.0, float(np.abs(self.g).max()))
        for perm in G_SYMMETRY_PERMS[1:]:
            diff = np.abs(self.g - self.g.transpose(perm))
            worst = np.unravel_index(np.argmax(diff), diff.shape)
            if diff[worst] > tol * scale:
                raise ContractError(
                    f"two-electron tensor breaks 8-fold symmetry at index "
                    f"{tuple(int(x) + 1 for x in worst)} under permutation {perm} "
                    f"(deviation {diff[worst]:.3e})"
                )
        return self


@dataclass(frozen=True, eq=False)
class FockState:
    """Fock matrix and density for a coefficient matrix C."""

    F: np.ndarray
    density: np.ndarray


class CostFunction:
    """Contract shared by all costs.

    Subclasses provide ``value``, ``euclidean_gradient`` and
    ``euclidean_hessian_matrix``; the operator apply defaults to
    multiplying the dense matrix against vec(V).
    """

    def value(self, C):
        raise NotImplementedError

    def euclidean_gradient(self, C):
        raise NotImplementedError

    def euclidean_hessian_matrix(self, C):
        raise NotImplementedError

    def euclidean_hessian_apply(self, C, V):
        d, n = V.shape
        return linalg.unvec(self.euclidean_hessian_matrix(C) @ linalg.vec(V), d, n)


def fock_matrix(ints, C):
    """Fock matrix F(C) = h + sum_kl P_kl (2 g_ikjl - g_ijkl), P = C C^T."""
    C = np.asarray(C, dtype=float)
    if C.shape[0] != ints.d:
        raise DimensionError(f"C has {C.shape[0]} rows, integrals have d = {ints.d}")
    P = C @ C.T
    coulomb = np.einsum("ikjl,kl->ij", ints.g, P)
    exchange = np.einsum("ijkl,kl->ij", ints.g, P)
    return FockState(F=ints.h + 2.0 * coulomb - exchange, density=P)


def hf_energy(ints, C):
    """Electronic energy sum_ij P_ij (h_ij + F_ij); e_nuc is not included."""
    state = fock_matrix(ints, C)
    return float(np.tensordot(state.density, ints.h + state.F))


def hf_euclidean_gradient(ints, C):
    """Array of partial derivatives of the electronic energy: 4 F(C) C."""
    state = fock_matrix(ints, C)
    return 4.0 * state.F @ np.asarray(C, dtype=float)


def _hessian_kernel(ints):
    """T[k,l,r,s] = 4 g_klrs - g_krls - g_krsl."""
    g = ints.g
    # transpose axes are the inverse permutations of the index maps
    return 4.0 * g - g.transpose(0, 2, 1, 3) - g.transpose(0, 3, 1, 2)


def hf_euclidean_hessian(ints, C, method="contract"):
    """Dense dN-by-dN Euclidean Hessian of the electronic energy.

    Entry ((k + i*d), (l + j*d)) is
    4 (F_kl delta_ij + sum_rs C_ri C_sj (4 g_klrs - g_krls - g_krsl)).

    ``method="loops"`` evaluates the entry formula element by element and is
    the slow reference; the contraction path must match it to 1e-12.
    """
    C = np.asarray(C, dtype=float)
    d, n = C.shape
    F = fock_matrix(ints, C).F
    if method == "loops":
        g = ints.g
        H = np.zeros((d * n, d * n))
        for j in range(n):
            for l in range(d):
                for i in range(n):
                    for k in range(d):
                        acc = F[k, l] if i == j else 0.0
                        for r in range(d):
                            for s in range(d):
                                acc += C[r, i] * C[s, j] * (
                                    4.0 * g[k, l, r, s]
                                    - g[k, r, l, s]
                                    - g[k, r, s, l]
                                )
                        H[k + i * d, l + j * d] = 4.0 * acc
        return H
    T = _hessian_kernel(ints)
    X = np.einsum("klrs,ri,sj->kilj", T, C, C)
    X += np.einsum("kl,ij->kilj", F, np.eye(n))
    return 4.0 * X.transpose(1, 0, 3, 2).reshape(d * n, d * n)


def hf_euclidean_hessian_apply(ints, C, V):
    """unvec(Hessian @ vec(V)) without forming the dense matrix."""
    C = np.asarray(C, dtype=float)
    V = np.asarray(V, dtype=float)
    F = fock_matrix(ints, C).F
    T = _hessian_kernel(ints)
    Y = V @ C.T
    Z = np.einsum("klrs,ls->kr", T, Y)
    return 4.0 * (F @ V + Z @ C)


class HartreeFockCost(CostFunction):
    """Hartree-Fock electronic energy as a function of the d-by-N
    orbital-coefficient matrix, from ingested integrals."""

    def __init__(self, ints):
        self.ints = ints
        self._cache_key = None
        self._cache = None

    @property
    def e_nuc(self):
        return self.ints.e_nuc

    def _fock(self, C):
        key = C.tobytes()
        if key != self._cache_key:
            self._cache = fock_matrix(self.ints, C)
            self._cache_key = key
        return self._cache

    def value(self, C):
        C = np.asarray(C, dtype=float)
        state = self._fock(C)
        return float(np.tensordot(state.density, self.ints.h + state.F))

    def euclidean_gradient(self, C):
        C = np.asarray(C, dtype=float)
        return 4.0 * self._fock(C).F @ C

    def euclidean_hessian_matrix(self, C):
        return hf_euclidean_hessian(self.ints, C)

    def euclidean_hessian_apply(self, C, V):
        return hf_euclidean_hessian_apply(self.ints, C, V)


class BrockettCost(CostFunction):
    """Trace cost tr(C^T A C) for symmetric A, minimized over Gr(N, d; S).

    The minimum over feasible C with N columns is the sum of the N smallest
    generalized eigenvalues of (A, S); the minimizer is spanned by the
    corresponding eigenvectors.
    """

    def __init__(self, A, metric):
        A = np.asarray(A, dtype=float)
        if np.linalg.norm(A - A.T) > 1e-12 * max(1.0, np.linalg.norm(A)):
            raise ContractError("Brockett matrix A must be symmetric")
        self.A = 0.5 * (A + A.T)
        self.metric = metric

    def value(self, C):
        C = np.asarray(C, dtype=float)
        return float(np.tensordot(C, self.A @ C))

    def euclidean_gradient(self, C):
        return 2.0 * self.A @ np.asarray(C, dtype=float)

    def euclidean_hessian_matrix(self, C):
        n = C.shape[1]
        return np.kron(np.eye(n), 2.0 * self.A)

    def euclidean_hessian_apply(self, C, V):
        return 2.0 * self.A @ np.asarray(V, dtype=float)

    def minimum(self, n):
        """Sum of the n smallest generalized eigenvalues of (A, S)."""
        w, _ = linalg.gen_eigen(self.A, self.metric.S)
        return float(np.sum(w[:n]))

    def minimizer(self, n):
        """S-orthonormal eigenvector block achieving :meth:`minimum`."""
        _, V = linalg.gen_eigen(self.A, self.metric.S)
        return V[:, :n].copy()


def brockett_cost(A, metric):
    """Construct the trace cost tr(C^T A C) over manifolds with metric S."""
    return BrockettCost(A, metric)
