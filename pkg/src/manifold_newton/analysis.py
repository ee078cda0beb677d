"""Experiment machinery: Stiefel-vs-Grassmann Hessian spectra, convergence
neighborhood mapping with per-direction radii, performance profiles, and
batch statistics over solver traces.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .manifolds import (
    GRASSMANN,
    STIEFEL,
    ManifoldPoint,
    build_tangent_basis,
    exp as manifold_exp,
    metric_inner,
    project_grassmann,
)
from .solvers import (
    CONVERGED,
    NMLM,
    MANIFOLD_FOR_METHOD,
    IntrinsicNewtonSystem,
    gram_schmidt_s,
    riemannian_grad_norm,
    run,
)

logger = logging.getLogger(__name__)

CONVERGED_TO_REFERENCE = "converged_to_reference"
CONVERGED_ELSEWHERE = "converged_elsewhere"
FAILED = "failed"

SAME_POINT_ANGLE_TOL = 1e-6


@dataclass(frozen=True)
class SpectrumComparison:
    """Position-matched comparison of the two intrinsic Hessian spectra.

    ``eigs_gr``/``eigs_st`` are descending; ``rms_difference`` is computed
    over the leading dim Gr pairs.  ``overlaps`` holds |<u_gr, u_st>| for
    the matched eigenvectors (as tangent matrices, S-metric);
    ``residual_projections`` holds the squared Grassmann-tangent projection
    norm of the trailing dim St - dim Gr Stiefel eigenvectors.
    """

    eigs_gr: np.ndarray
    eigs_st: np.ndarray
    rms_difference: float
    overlaps: np.ndarray
    residual_projections: np.ndarray


def compare_spectra(cost, point, seed=0):
    """Assemble both intrinsic Hessians at ``point`` (same basis completion
    seed, hence the same C_perp) and compare their spectra."""
    base_gr = point.with_manifold(GRASSMANN)
    base_st = point.with_manifold(STIEFEL)
    basis_gr = build_tangent_basis(base_gr, seed=seed)
    basis_st = build_tangent_basis(base_st, seed=seed)
    sys_gr = IntrinsicNewtonSystem(cost, base_gr, basis_gr)
    sys_st = IntrinsicNewtonSystem(cost, base_st, basis_st)
    w_gr, U_gr = linalg.sym_eigen(sys_gr.H)
    w_st, U_st = linalg.sym_eigen(sys_st.H)
    dim_gr, dim_st = len(basis_gr), len(basis_st)
    diffs = w_gr - w_st[:dim_gr]
    rms = float(np.sqrt(np.mean(diffs**2)))
    overlaps = np.empty(dim_gr)
    for i in range(dim_gr):
        v_gr = _coords_to_tangent(U_gr[:, i], basis_gr)
        v_st = _coords_to_tangent(U_st[:, i], basis_st)
        overlaps[i] = abs(metric_inner(point, v_gr, v_st))
    residual = np.empty(dim_st - dim_gr)
    for t, i in enumerate(range(dim_gr, dim_st)):
        v_st = _coords_to_tangent(U_st[:, i], basis_st)
        proj = project_grassmann(base_gr, v_st)
        residual[t] = metric_inner(point, proj, proj)
    return SpectrumComparison(
        eigs_gr=w_gr, eigs_st=w_st, rms_difference=rms,
        overlaps=overlaps, residual_projections=residual)


def _coords_to_tangent(coords, basis):
    V = np.zeros_like(basis.base.C)
    for x, v in zip(coords, basis.vectors):
        V += x * v
    return V


def largest_principal_angle(C1, C2, S):
    """Largest principal angle between the column spaces of two
    S-orthonormal frames.

    Small angles are computed through the sine (the projection residual),
    which stays accurate where arccos of a near-unit cosine loses half the
    significant digits.
    """
    L = np.linalg.cholesky(S)
    Q1, Q2 = L.T @ C1, L.T @ C2
    M = Q1.T @ Q2
    cos_min = np.linalg.svd(M, compute_uv=False).min()
    if cos_min < 0.7:
        return float(np.arccos(np.clip(cos_min, -1.0, 1.0)))
    resid = Q2 - Q1 @ M
    sin_max = np.linalg.svd(resid, compute_uv=False).max()
    return float(np.arcsin(np.clip(sin_max, 0.0, 1.0)))


@dataclass(frozen=True)
class Outcome:
    kind: str
    iterations: int | None = None


@dataclass
class NeighborhoodMap:
    """Outcome grid of solver restarts around a critical point.

    ``outcomes[j][k]`` is the result of starting at exp(t_grid[k] * v_j);
    directions are the +basis vectors followed by the -basis vectors.
    ``radii[j]`` is t_step times the length of the leading run of
    converged-to-reference outcomes (the star-shaped/contiguous rule), so
    isolated far-out successes never extend a radius.
    """

    reference: ManifoldPoint
    method: str
    t_step: float
    t_grid: np.ndarray
    n_directions: int
    outcomes: list = field(repr=False)
    radii: np.ndarray = field(repr=False)

    def outcome_rows(self):
        rows = []
        for j in range(self.n_directions):
            for k, t in enumerate(self.t_grid):
                o = self.outcomes[j][k]
                rows.append({
                    "direction": j,
                    "t": round(float(t), 12),
                    "outcome": o.kind,
                    "iterations": o.iterations,
                })
        return rows


@dataclass(frozen=True)
class RadiiSummary:
    r_min: float
    r_avg: float
    r_max: float


def radii_summary(nmap):
    """Min/mean/max of the per-direction convergence radii."""
    radii = np.asarray(nmap.radii if isinstance(nmap, NeighborhoodMap) else nmap,
                       dtype=float)
    if radii.size == 0:
        raise ValueError("neighborhood map has no directions")
    lo, hi = float(radii.min()), float(radii.max())
    # the exact mean lies in [lo, hi]; keep summation roundoff from
    # breaking the order-statistics invariant
    avg = min(max(float(radii.mean()), lo), hi)
    return RadiiSummary(r_min=lo, r_avg=avg, r_max=hi)


def radii_quartiles(nmap):
    radii = np.asarray(nmap.radii, dtype=float)
    q1, q2, q3 = np.percentile(radii, [25, 50, 75])
    return {"q1": float(q1), "median": float(q2), "q3": float(q3)}


def map_neighborhood(cost, solver_config, x_star, t_max, t_step=0.05,
                     eps0=None, direction_cap=None, jobs=1):
    """Probe the convergence neighborhood of ``solver_config.method``
    around the critical point ``x_star``.

    Starts the solver from exp(t * v) for every direction v in {+/- basis
    vectors} and every grid value t = t_step, 2 t_step, ..., t_max, and
    classifies each run: back to the same critical point (column spaces
    match in the S-metric), converged elsewhere, or failed.  A run "comes
    back" when the largest principal angle is below 1e-6.

    ``jobs > 1`` threads the (direction, t) probes; that only pays off
    when individual solves are expensive, since small dense problems
    contend for the BLAS thread pool.
    """
    method = solver_config.method
    manifold = MANIFOLD_FOR_METHOD.get(method, STIEFEL)
    base = x_star.with_manifold(manifold)
    gn = riemannian_grad_norm(cost, base)
    if gn >= solver_config.grad_tol:
        raise ValueError(
            f"reference point is not critical (gradient norm {gn:.3e})")
    basis = build_tangent_basis(base, seed=solver_config.seed)
    directions = [v for v in basis.vectors] + [-v for v in basis.vectors]
    if direction_cap is not None and direction_cap < len(directions):
        rng = np.random.default_rng(solver_config.seed)
        idx = rng.choice(len(directions), size=direction_cap, replace=False)
        directions = [directions[i] for i in sorted(idx)]
    n_steps = int(round(t_max / t_step))
    t_grid = t_step * np.arange(1, n_steps + 1)

    def probe(args):
        j, k = args
        t = t_grid[k]
        try:
            x0 = manifold_exp(base, t * directions[j])
        except Exception as exc:  # geodesic itself failed
            logger.debug("direction %d t=%.3f: exp failed (%s)", j, t, exc)
            return j, k, Outcome(FAILED)
        trace = run(cost, x0, solver_config, eps0=eps0)
        if trace.status != CONVERGED:
            return j, k, Outcome(FAILED)
        C_final = trace.final_C
        violation = np.linalg.norm(
            C_final.T @ base.metric.S @ C_final - np.eye(C_final.shape[1]))
        if violation > 1e-8:
            return j, k, Outcome(FAILED)
        if method == NMLM:
            C_final = gram_schmidt_s(C_final, base.metric.S)
        angle = largest_principal_angle(C_final, base.C, base.metric.S)
        if angle < SAME_POINT_ANGLE_TOL:
            return j, k, Outcome(CONVERGED_TO_REFERENCE, trace.n_iter)
        return j, k, Outcome(CONVERGED_ELSEWHERE, trace.n_iter)

    tasks = [(j, k) for j in range(len(directions)) for k in range(n_steps)]
    results = {}
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for j, k, outcome in pool.map(probe, tasks):
                results[(j, k)] = outcome
    else:
        for args in tasks:
            j, k, outcome = probe(args)
            results[(j, k)] = outcome
    outcomes = [[results[(j, k)] for k in range(n_steps)]
                for j in range(len(directions))]
    radii = np.empty(len(directions))
    for j, row in enumerate(outcomes):
        m = 0
        for o in row:
            if o.kind != CONVERGED_TO_REFERENCE:
                break
            m += 1
        radii[j] = m * t_step
    return NeighborhoodMap(
        reference=base, method=method, t_step=t_step, t_grid=t_grid,
        n_directions=len(directions), outcomes=outcomes, radii=radii)


LOWER_IS_BETTER = "lower_is_better"
HIGHER_IS_BETTER = "higher_is_better"


@dataclass(frozen=True)
class PerformanceProfile:
    """Step functions rho_s(tau): the fraction of problems on which method
    s is within a factor tau of the per-problem best."""

    methods: tuple
    orientation: str
    n_problems: int
    ratios: dict  # method -> {problem_id: ratio (may be inf)}
    breakpoints: dict  # method -> list of (tau, rho), tau ascending

    def rho(self, method, tau):
        value = 0.0
        for bp_tau, bp_rho in self.breakpoints[method]:
            if bp_tau <= tau:
                value = bp_rho
            else:
                break
        return value

    def plateau(self, method):
        bps = self.breakpoints[method]
        return bps[-1][1] if bps else 0.0


def performance_profile(results, orientation=LOWER_IS_BETTER):
    """Build performance profiles from per-(method, problem) metrics.

    ``results`` maps method -> {problem_id: metric or None}.  Missing or
    non-converged entries (None, NaN) get an infinite ratio and are never
    counted; for the higher-is-better orientation a non-positive metric is
    treated the same way, so a zero radius never scores.
    """
    if orientation not in (LOWER_IS_BETTER, HIGHER_IS_BETTER):
        raise ValueError(f"unknown orientation {orientation!r}")
    methods = tuple(results)
    if len(methods) < 1:
        raise ValueError("need at least one method")
    problems = sorted({p for m in methods for p in results[m]})
    if not problems:
        raise ValueError("need at least one problem")

    def valid(x):
        if x is None or not math.isfinite(x):
            return False
        return x > 0 if orientation == HIGHER_IS_BETTER else True

    ratios = {m: {} for m in methods}
    for p in problems:
        entries = {m: results[m].get(p) for m in methods}
        usable = [x for x in entries.values() if valid(x)]
        for m, x in entries.items():
            if not valid(x) or not usable:
                ratios[m][p] = math.inf
            elif orientation == LOWER_IS_BETTER:
                best = min(usable)
                if best == 0:
                    ratios[m][p] = 1.0 if x == 0 else math.inf
                else:
                    ratios[m][p] = x / best
            else:
                ratios[m][p] = max(usable) / x
    n = len(problems)
    breakpoints = {}
    for m in methods:
        finite = sorted(r for r in ratios[m].values() if math.isfinite(r))
        bps = []
        for tau in finite:
            count = sum(1 for r in ratios[m].values() if r <= tau)
            if bps and bps[-1][0] == tau:
                continue
            bps.append((tau, count / n))
        breakpoints[m] = bps
    return PerformanceProfile(methods=methods, orientation=orientation,
                              n_problems=n, ratios=ratios,
                              breakpoints=breakpoints)


def dataset_statistics(traces, by_delta=False):
    """Converged counts and mean iterations over converged cases.

    ``traces`` is a list of SolverTrace; rows are grouped by method, and
    additionally by the truncation cutoff when ``by_delta`` is set (the
    delta-sweep table).  Averages use converged runs only.
    """
    groups = {}
    for tr in traces:
        key = (tr.config.method, tr.config.delta if by_delta else None)
        groups.setdefault(key, []).append(tr)
    rows = []
    for (method, delta), runs in sorted(groups.items(),
                                        key=lambda kv: (kv[0][0], kv[0][1] or 0)):
        conv = [tr for tr in runs if tr.status == CONVERGED]
        mean_iter = (sum(tr.n_iter for tr in conv) / len(conv)) if conv else None
        row = {
            "method": method,
            "n_total": len(runs),
            "n_converged": len(conv),
            "fraction": len(conv) / len(runs),
            "mean_iterations": mean_iter,
        }
        if by_delta:
            row["delta"] = delta
        rows.append(row)
    return rows


def format_statistics_row(row):
    """Render a statistics row as 'k/n (p%) mean', e.g. '92/125 (73.6%) 7.576'."""
    mean = row["mean_iterations"]
    mean_str = f"{mean:.3f}" if mean is not None else "-"
    return (f"{row['n_converged']}/{row['n_total']} "
            f"({100.0 * row['fraction']:.1f}%) {mean_str}")
