"""Command-line entry point: batch solves, spectrum comparisons,
convergence-neighborhood maps, performance profiles, and manifest checks.

Problems come from a TOML manifest; each entry is either an integral file
or a synthetic Brockett spec, so the full pipeline runs with zero external
data.  Exit codes: 0 success, 1 usage error, 2 ingestion/validation error,
3 crash or non-isolated numerical failure.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import analysis, io, solvers
from .costs import BrockettCost, HartreeFockCost
from .linalg import ContractError, unvec, vec
from .manifolds import GRASSMANN, ManifoldPoint, MetricMatrix, exp_stiefel, project
from .solvers import (
    CONVERGED,
    MRNM_ST,
    NMLM,
    RNM_GR,
    SolverConfig,
    initial_guess,
    run,
)

logger = logging.getLogger("manifold_newton.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INGESTION = 2
EXIT_FAILURE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(f"{self.prog}: error: {message}")


class SystemExit2(SystemExit):
    def __init__(self, message):
        print(message, file=sys.stderr)
        super().__init__(EXIT_USAGE)


@dataclass
class Problem:
    id: str
    cost: object
    metric: MetricMatrix
    x0: ManifoldPoint
    guess_kind: str
    config: SolverConfig
    e_nuc: float = 0.0


def _brockett_matrices(spec):
    rng_rot = np.random.default_rng([spec.seed, 0])
    rng_s = np.random.default_rng([spec.seed, 1])
    d = spec.d
    A = np.diag(np.asarray(spec.eigenvalues, dtype=float))
    if spec.rotate:
        Q, _ = np.linalg.qr(rng_rot.standard_normal((d, d)))
        A = Q @ A @ Q.T
    if spec.s_kind == "random_spd":
        B = rng_s.standard_normal((d, d))
        S = B @ B.T / d + np.eye(d)
    else:
        S = np.eye(d)
    return 0.5 * (A + A.T), S


def _resolve_config(manifest, entry, args, method_override=None):
    merged = dict(manifest.defaults)
    merged.update(entry.overrides)
    for key in ("grad_tol", "max_iter", "delta", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if getattr(args, "hessian", None):
        merged["hessian_mode"] = args.hessian
    method = (method_override or getattr(args, "method", None)
              or merged.get("method") or RNM_GR)
    merged["method"] = method
    allowed = {k: merged[k] for k in
               ("method", "hessian_mode", "grad_tol", "max_iter", "delta",
                "seed", "record_spectrum") if k in merged}
    return SolverConfig(**allowed)


def build_problem(manifest, entry, args, method_override=None):
    """Materialize a manifest entry: cost, metric, starting point, config."""
    config = _resolve_config(manifest, entry, args, method_override)
    if entry.brockett is not None:
        spec = entry.brockett
        A, S = _brockett_matrices(spec)
        metric = MetricMatrix(S)
        cost = BrockettCost(A, metric)
        n = spec.n
        e_nuc = 0.0
        kind = entry.guess if entry.guess != "default" else "first_columns"
        if kind == "first_columns":
            x0 = initial_guess(metric, "first_columns", n=n)
        elif kind == "perturbed_minimizer":
            x_min = ManifoldPoint(cost.minimizer(n), metric)
            rng = np.random.default_rng([spec.seed, 2])
            V = project(x_min.with_manifold(GRASSMANN),
                        rng.standard_normal((spec.d, n)))
            V = V / max(metric.norm(V), 1e-300) * entry.guess_t
            x0 = exp_stiefel(x_min, V)
        elif kind == "user_file":
            C = io.read_coefficient_file(entry.guess_path)
            x0 = initial_guess(metric, "user_file", metric=metric, C=C,
                               orthonormalize=False)
        else:
            raise io.IngestionError(
                f"problem {entry.id!r}: unknown guess kind {kind!r}")
    else:
        ints = io.ingest_integrals(entry.integrals_path)
        metric = MetricMatrix(ints.S)
        cost = HartreeFockCost(ints)
        e_nuc = ints.e_nuc
        kind = entry.guess if entry.guess != "default" else "core_hamiltonian"
        if kind in ("core_hamiltonian", "first_columns"):
            x0 = initial_guess(ints, kind, metric=metric)
        elif kind == "user_file":
            C = io.read_coefficient_file(entry.guess_path)
            x0 = initial_guess(ints, "user_file", metric=metric, C=C,
                               orthonormalize=False)
        else:
            raise io.IngestionError(
                f"problem {entry.id!r}: unknown guess kind {kind!r}")
    return Problem(id=entry.id, cost=cost, metric=metric, x0=x0,
                   guess_kind=kind, config=config, e_nuc=e_nuc)


def _for_each_problem(manifest, jobs, fn):
    """Run fn(entry) per problem, isolating failures; returns
    (results, exit_code) where the exit code reflects the worst isolated
    failure (ingestion beats crash-free, crash beats ingestion)."""
    results = {}
    worst = EXIT_OK

    def safe(entry):
        try:
            return entry.id, fn(entry), None
        except Exception as exc:  # isolate per-problem failures
            logger.error("problem %s failed: %s", entry.id, exc)
            return entry.id, None, exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(safe, manifest.problems))
    else:
        outs = [safe(e) for e in manifest.problems]
    for pid, value, exc in outs:
        if exc is None:
            results[pid] = value
        elif isinstance(exc, (io.IngestionError, ContractError)):
            worst = max(worst, EXIT_INGESTION)
        else:
            worst = EXIT_FAILURE
    return results, worst


def cmd_solve(args):
    manifest = io.load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    deltas = None
    if args.delta_sweep:
        deltas = [float(tok) for tok in args.delta_sweep.split(",") if tok]
        if not deltas:
            raise SystemExit2("--delta-sweep needs a comma-separated list")

    def solve_entry(entry):
        traces = []
        if deltas is None:
            problem = build_problem(manifest, entry, args)
            trace = run(problem.cost, problem.x0, problem.config,
                        problem_id=problem.id, initial_guess=problem.guess_kind)
            io.write_trace(trace, os.path.join(
                args.out, f"{problem.id}_{problem.config.method}.trace.jsonl"))
            if problem.e_nuc:
                logger.info("%s: total energy %.10f (electronic %.10f + enuc)",
                            problem.id, trace.final_value + problem.e_nuc,
                            trace.final_value)
            traces.append(trace)
        else:
            for delta in deltas:
                problem = build_problem(manifest, entry, args,
                                        method_override=MRNM_ST)
                config = replace(problem.config, delta=delta)
                trace = run(problem.cost, problem.x0, config,
                            problem_id=problem.id,
                            initial_guess=problem.guess_kind)
                io.write_trace(trace, os.path.join(
                    args.out,
                    f"{problem.id}_{config.method}_delta{delta:g}.trace.jsonl"))
                traces.append(trace)
        return traces

    results, worst = _for_each_problem(manifest, args.jobs, solve_entry)
    all_traces = [tr for traces in results.values() for tr in traces]
    all_traces.sort(key=lambda tr: (tr.problem_id, tr.config.delta))
    io.write_summary_csv([tr.summary_row() for tr in all_traces],
                         os.path.join(args.out, "summary.csv"))
    stats = analysis.dataset_statistics(all_traces, by_delta=deltas is not None)
    io.write_statistics_csv(stats, os.path.join(args.out, "statistics.csv"))
    if deltas is not None:
        for row in stats:
            print(f"delta={row['delta']:g}  "
                  f"{analysis.format_statistics_row(row)}")
    return worst


def cmd_spectrum(args):
    manifest = io.load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)

    def spectrum_entry(entry):
        problem = build_problem(manifest, entry, args)
        point = problem.x0
        if args.at == "solution":
            ref = _reference_solution(problem)
            if ref is None:
                logger.warning("spectrum: skipping %s: no converged reference",
                               problem.id)
                return None
            point = ref
        comp = analysis.compare_spectra(problem.cost, point,
                                        seed=problem.config.seed)
        io.write_spectrum_csv(comp, os.path.join(
            args.out, f"{problem.id}_spectrum.csv"))
        return comp.rms_difference

    results, worst = _for_each_problem(manifest, args.jobs, spectrum_entry)
    d_values = {pid: val for pid, val in results.items() if val is not None}
    io.write_d_csv(d_values, os.path.join(args.out, "spectrum_D.csv"))
    return worst


def _reference_solution(problem):
    """Critical point for neighborhood mapping: solve with the Grassmann
    method, falling back to the truncated Stiefel method."""
    for method in (RNM_GR, MRNM_ST):
        config = replace(problem.config, method=method,
                         hessian_mode="intrinsic")
        trace = run(problem.cost, problem.x0, config, problem_id=problem.id)
        if trace.status == CONVERGED:
            return ManifoldPoint(trace.final_C, problem.metric)
    return None


def cmd_neighborhood(args):
    manifest = io.load_manifest(args.manifest)
    os.makedirs(args.out, exist_ok=True)

    def neighborhood_entry(entry):
        problem = build_problem(manifest, entry, args)
        reference = _reference_solution(problem)
        if reference is None:
            logger.warning("neighborhood: skipping %s: no converged reference",
                           problem.id)
            return None
        nmap = analysis.map_neighborhood(
            problem.cost, problem.config, reference, t_max=args.t_max,
            t_step=args.t_step, direction_cap=args.direction_cap)
        io.write_outcomes_csv(nmap, os.path.join(
            args.out, f"{problem.id}_{problem.config.method}_neighborhood.csv"))
        summary = analysis.radii_summary(nmap)
        quartiles = analysis.radii_quartiles(nmap)
        return {
            "molecule_id": problem.id,
            "method": problem.config.method,
            "r_min": summary.r_min,
            "r_avg": summary.r_avg,
            "r_max": summary.r_max,
            **quartiles,
        }

    results, worst = _for_each_problem(manifest, args.jobs,
                                       neighborhood_entry)
    rows = [row for _, row in sorted(results.items()) if row is not None]
    io.write_radii_csv(rows, os.path.join(args.out, "radii.csv"))
    return worst


RADII_METRICS = ("r_min", "r_avg", "r_max")


def cmd_profile(args):
    rows = []
    for path in args.inputs:
        if not os.path.exists(path):
            raise io.IngestionError(f"input not found: {path}")
        reader = (io.read_radii_csv if args.metric in RADII_METRICS
                  else io.read_summary_csv)
        rows.extend(reader(path))
    results = {}
    for row in rows:
        method = row["method"]
        pid = row["molecule_id"]
        bucket = results.setdefault(method, {})
        if pid in bucket:
            raise io.IngestionError(
                f"duplicate entry for problem {pid!r}, method {method!r}")
        if args.metric == "iterations":
            value = (float(row["n_iter"])
                     if row.get("status") == CONVERGED else None)
        else:
            raw = row.get(args.metric, "")
            value = float(raw) if raw not in ("", None) else None
        bucket[pid] = value
    if len(results) < 2:
        raise SystemExit2("profile needs results from at least two methods")
    all_ids = sorted({pid for b in results.values() for pid in b})
    missing = {m: sorted(set(all_ids) - set(b)) for m, b in results.items()}
    missing = {m: ids for m, ids in missing.items() if ids}
    if missing:
        detail = "; ".join(f"{m}: {', '.join(ids)}" for m, ids in missing.items())
        raise io.IngestionError(f"problem ids missing for some methods: {detail}")
    orientation = (analysis.HIGHER_IS_BETTER if args.metric in RADII_METRICS
                   else analysis.LOWER_IS_BETTER)
    profile = analysis.performance_profile(results, orientation)
    io.write_profile_csv(profile, args.out)
    return EXIT_OK


def cmd_check(args):
    manifest = io.load_manifest(args.manifest)
    failures = 0

    def report(pid, name, ok, detail=""):
        nonlocal failures
        tag = "ok" if ok else "FAIL"
        if not ok:
            failures += 1
        suffix = f" ({detail})" if detail else ""
        print(f"{tag:4s} {pid}: {name}{suffix}")

    for entry in manifest.problems:
        try:
            problem = build_problem(manifest, entry, args)
        except (io.IngestionError, ContractError) as exc:
            report(entry.id, "ingestion", False, str(exc))
            continue
        report(entry.id, "ingestion", True)
        C = problem.x0.C
        feas = problem.x0.feasibility_violation
        report(entry.id, "guess feasibility", feas < 1e-10, f"{feas:.2e}")
        rng = np.random.default_rng(problem.config.seed)
        n = C.shape[1]
        M, _ = np.linalg.qr(rng.standard_normal((n, n)))
        v0, v1 = problem.cost.value(C), problem.cost.value(C @ M)
        inv = abs(v1 - v0) <= 1e-12 * max(1.0, abs(v0))
        report(entry.id, "orthogonal invariance", inv, f"{abs(v1 - v0):.2e}")
        G = problem.cost.euclidean_gradient(C)
        worst = 0.0
        for _ in range(3):
            V = rng.standard_normal(C.shape)
            V /= np.linalg.norm(V)
            step = 1e-5
            fd = (problem.cost.value(C + step * V)
                  - problem.cost.value(C - step * V)) / (2 * step)
            worst = max(worst, abs(fd - float(np.tensordot(G, V))))
        report(entry.id, "gradient vs finite differences", worst < 1e-5,
               f"{worst:.2e}")
        H = problem.cost.euclidean_hessian_matrix(C)
        V = rng.standard_normal(C.shape)
        lhs = problem.cost.euclidean_hessian_apply(C, V)
        from .linalg import unvec, vec

        rhs = unvec(H @ vec(V), *C.shape)
        err = np.linalg.norm(lhs - rhs) / max(1.0, np.linalg.norm(rhs))
        report(entry.id, "hessian apply vs matrix", err < 1e-12, f"{err:.2e}")
        sym_err = np.linalg.norm(H - H.T) / max(1.0, np.linalg.norm(H))
        report(entry.id, "hessian symmetry", sym_err < 1e-10, f"{sym_err:.2e}")
    return EXIT_INGESTION if failures else EXIT_OK


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=None,
                        help="RNG seed for tangent-basis completions")
    parser.add_argument("--jobs", type=int, default=1,
                        help="concurrent problems")
    parser.add_argument("--grad-tol", dest="grad_tol", type=float, default=None)
    parser.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    parser.add_argument("--delta", type=float, default=None,
                        help="spectrum-truncation cutoff for mrnm_st")
    parser.add_argument("--hessian", choices=("intrinsic", "extrinsic"),
                        default=None)


def build_parser():
    parser = _Parser(prog="manopt",
                     description="Newton's method on generalized Stiefel and "
                                 "Grassmann manifolds")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="batch Newton solves")
    p_solve.add_argument("--manifest", required=True)
    p_solve.add_argument("--method", choices=solvers.METHODS, default=None)
    p_solve.add_argument("--out", default="manopt_out")
    p_solve.add_argument("--delta-sweep", dest="delta_sweep", default=None,
                         help="comma-separated cutoffs; forces mrnm_st")
    _add_common(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_spec = sub.add_parser("spectrum", help="Stiefel vs Grassmann spectra")
    p_spec.add_argument("--manifest", required=True)
    p_spec.add_argument("--at", choices=("initial", "solution"),
                        default="initial")
    p_spec.add_argument("--out", default="manopt_out")
    p_spec.add_argument("--method", choices=solvers.METHODS, default=None)
    _add_common(p_spec)
    p_spec.set_defaults(func=cmd_spectrum)

    p_nbhd = sub.add_parser("neighborhood",
                            help="convergence-neighborhood mapping")
    p_nbhd.add_argument("--manifest", required=True)
    p_nbhd.add_argument("--method", choices=solvers.METHODS, default=None)
    p_nbhd.add_argument("--t-max", dest="t_max", type=float, default=1.0)
    p_nbhd.add_argument("--t-step", dest="t_step", type=float, default=0.05)
    p_nbhd.add_argument("--direction-cap", dest="direction_cap", type=int,
                        default=None)
    p_nbhd.add_argument("--out", default="manopt_out")
    _add_common(p_nbhd)
    p_nbhd.set_defaults(func=cmd_neighborhood)

    p_prof = sub.add_parser("profile", help="performance profiles")
    p_prof.add_argument("--inputs", nargs="+", required=True,
                        help="summary or radii CSV files")
    p_prof.add_argument("--metric",
                        choices=("iterations",) + RADII_METRICS,
                        default="iterations")
    p_prof.add_argument("--out", default="profile.csv")
    _add_common(p_prof)
    p_prof.set_defaults(func=cmd_profile)

    p_check = sub.add_parser("check", help="run the invariant suite")
    p_check.add_argument("--manifest", required=True)
    p_check.add_argument("--method", choices=solvers.METHODS, default=None)
    _add_common(p_check)
    p_check.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    level = os.environ.get("MANOPT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit2:
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except SystemExit2:
        return EXIT_USAGE
    except io.IngestionError as exc:
        logger.error("%s", exc)
        print(f"manopt: ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGESTION
    except solvers.NumericalFailure as exc:
        print(f"manopt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
