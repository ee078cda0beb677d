"""Shared builders: synthetic integral sets, Brockett instances, feasible
points, and independent oracles used across the suite."""

import os

import numpy as np
import pytest

from manifold_newton.costs import (
    BrockettCost,
    G_SYMMETRY_PERMS,
    HartreeFockCost,
    IntegralSet,
)
from manifold_newton.io import ingest_integrals
from manifold_newton.manifolds import (
    GRASSMANN,
    STIEFEL,
    ManifoldPoint,
    MetricMatrix,
    exp_stiefel,
    project,
)
from manifold_newton.solvers import gram_schmidt_s

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture_path(name):
    return os.path.join(FIXTURE_DIR, name)


def _symmetrize_g_exact(raw):
    """Average over each symmetry orbit in a canonical order so orbit
    partners hold bit-identical values."""
    g = np.empty_like(raw)
    values = {}
    for idx in np.ndindex(*raw.shape):
        orbit = sorted({tuple(idx[p] for p in perm)
                        for perm in G_SYMMETRY_PERMS})
        key = orbit[0]
        if key not in values:
            values[key] = sum(raw[o] for o in orbit) / len(orbit)
        g[idx] = values[key]
    return g


def synthetic_integral_set(seed, d, n_occ, g_scale=0.1):
    """Random integral data with exact symmetries; h-dominated so the
    core-Hamiltonian guess lands inside the Newton basin."""
    rng = np.random.default_rng([seed, 90])
    W = rng.standard_normal((d, d)) * 0.15
    S = np.eye(d) + 0.5 * (W + W.T)
    S = S @ S.T
    noise = rng.standard_normal((d, d))
    h = -np.diag(np.linspace(2.0, 0.5, d)) + 0.1 * (noise + noise.T)
    g = _symmetrize_g_exact(rng.standard_normal((d, d, d, d)) * g_scale)
    return IntegralSet(d=d, n_occ=n_occ, S=S, h=h, g=g, e_nuc=1.5).validate()


def random_spd(rng, d, scale=1.0):
    B = rng.standard_normal((d, d))
    return scale * (B @ B.T / d + np.eye(d))


def random_feasible_point(rng, metric, n, manifold=STIEFEL):
    C = gram_schmidt_s(rng.standard_normal((metric.dim, n)), metric.S)
    return ManifoldPoint(C, metric, manifold)


def brockett_instance(seed, d, n, s_identity=True, spread=(0.5, 5.0)):
    """Seeded Brockett problem with known minimizer; returns (cost, metric, n)."""
    rng_e = np.random.default_rng([seed, 0])
    rng_q = np.random.default_rng([seed, 1])
    rng_s = np.random.default_rng([seed, 2])
    eigs = np.sort(rng_e.uniform(*spread, size=d))
    Q, _ = np.linalg.qr(rng_q.standard_normal((d, d)))
    A = Q @ np.diag(eigs) @ Q.T
    S = np.eye(d) if s_identity else random_spd(rng_s, d)
    metric = MetricMatrix(S)
    return BrockettCost(0.5 * (A + A.T), metric), metric, n


def perturbed_minimizer(cost, metric, n, seed, distance=0.1, manifold=STIEFEL):
    """Start point at geodesic distance ``distance`` from the Brockett
    minimizer, along a seeded horizontal direction."""
    x_min = ManifoldPoint(cost.minimizer(n), metric, manifold)
    rng = np.random.default_rng([seed, 3])
    V = project(x_min.with_manifold(GRASSMANN),
                rng.standard_normal((metric.dim, n)))
    V *= distance / metric.norm(V)
    return exp_stiefel(x_min, V).with_manifold(manifold)


def brockett_pathology_instance():
    """Frozen Brockett instance (N=2) on which the plain Stiefel Newton
    iteration robustly stalls (gradient plateau around 4e-2, orders of
    magnitude above the tolerance) while the truncated variant converges
    in a few steps; robust to 1e-9 jitter of both A and the start."""
    A = np.loadtxt(fixture_path("stiefel_pathology_A.txt"))
    x0 = np.loadtxt(fixture_path("stiefel_pathology_x0.txt"))
    metric = MetricMatrix(np.eye(A.shape[0]))
    cost = BrockettCost(0.5 * (A + A.T), metric)
    return cost, metric, 2, ManifoldPoint(x0, metric, STIEFEL)


def slater_determinant_energy(ints, C):
    """Independent oracle: restricted determinant energy from the
    Slater-Condon rules in the molecular-orbital basis,
    2 sum_a h_aa + sum_ab (2 J_ab - K_ab)."""
    hmo = C.T @ ints.h @ C
    gmo = np.einsum("pqrs,pi,qj,rk,sl->ijkl", ints.g, C, C, C, C)
    n = C.shape[1]
    energy = 2.0 * np.trace(hmo)
    for a in range(n):
        for b in range(n):
            energy += 2.0 * gmo[a, b, a, b] - gmo[a, b, b, a]
    return float(energy)


@pytest.fixture(scope="session")
def h2_integrals():
    return ingest_integrals(fixture_path("h2_sto3g.hfint"))


@pytest.fixture(scope="session")
def hf_d4n2_integrals():
    return ingest_integrals(fixture_path("hf_d4n2.hfint"))


@pytest.fixture(scope="session")
def hf_d3n1_integrals():
    return ingest_integrals(fixture_path("hf_d3n1.hfint"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240612)


def hf_problem(ints):
    cost = HartreeFockCost(ints)
    metric = MetricMatrix(ints.S)
    return cost, metric
