"""File formats: the integral interchange format, problem manifests,
trace streams, and the CSV emitters consumed by plotting tools.

Integral files are plain text.  A header ``HF d=<d> nocc=<N> enuc=<real>``
is followed by sections ``S``, ``H`` and ``G``; records are ``i j value``
(1-based, upper triangle sufficient) for S and H and ``i j k l value`` for
G in chemists' notation (ij|kl).  Unlisted entries are zero.  On load the
two-electron tensor is expanded by its 8-fold symmetry and permuted to the
internal convention g[i,j,k,l] = (ik|jl), i.e. orbitals i,k on electron 1.
"""

import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .costs import IntegralSet

CHEM_PERMS = (
    (0, 1, 2, 3), (1, 0, 2, 3), (0, 1, 3, 2), (1, 0, 3, 2),
    (2, 3, 0, 1), (3, 2, 0, 1), (2, 3, 1, 0), (3, 2, 1, 0),
)


class IngestionError(ValueError):
    """Malformed or inconsistent input file."""


def _orbit(idx):
    return {tuple(idx[p] for p in perm) for perm in CHEM_PERMS}


def chemists_to_internal(V):
    """Permute a chemists'-notation tensor (ij|kl) to g[i,j,k,l] = (ik|jl)."""
    return np.ascontiguousarray(V.transpose(0, 2, 1, 3))


def internal_to_chemists(g):
    return np.ascontiguousarray(g.transpose(0, 2, 1, 3))


def ingest_integrals(path):
    """Read and validate an integral file into an :class:`IntegralSet`."""
    d = n_occ = None
    e_nuc = 0.0
    S = h = V = None
    seen = {"S": {}, "H": {}, "G": {}}
    section = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("HF"):
                try:
                    fields = dict(tok.split("=", 1) for tok in line.split()[1:])
                    d = int(fields["d"])
                    n_occ = int(fields["nocc"])
                    e_nuc = float(fields.get("enuc", 0.0))
                except (ValueError, KeyError) as exc:
                    raise IngestionError(f"{path}:{lineno}: bad header: {exc}")
                S = np.zeros((d, d))
                h = np.zeros((d, d))
                V = np.zeros((d, d, d, d))
                continue
            if line in ("S", "H", "G"):
                if d is None:
                    raise IngestionError(f"{path}:{lineno}: section before header")
                section = line
                continue
            if section is None:
                raise IngestionError(f"{path}:{lineno}: record outside any section")
            tokens = line.split()
            want = 5 if section == "G" else 3
            if len(tokens) != want:
                raise IngestionError(
                    f"{path}:{lineno}: expected {want} fields, got {len(tokens)}")
            try:
                idx = tuple(int(t) - 1 for t in tokens[:-1])
                value = float(tokens[-1])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}")
            if any(i < 0 or i >= d for i in idx):
                raise IngestionError(
                    f"{path}:{lineno}: index out of range 1..{d}")
            if section == "G":
                key = min(_orbit(idx))
                prev = seen["G"].get(key)
                if prev is not None and abs(prev - value) > 1e-10:
                    raise IngestionError(
                        f"{path}:{lineno}: conflicting values for symmetric "
                        f"slots of {tuple(i + 1 for i in idx)}")
                seen["G"][key] = value
                for slot in _orbit(idx):
                    V[slot] = value
            else:
                i, j = idx
                key = (min(i, j), max(i, j))
                prev = seen[section].get(key)
                if prev is not None and abs(prev - value) > 1e-10:
                    raise IngestionError(
                        f"{path}:{lineno}: conflicting values for entry "
                        f"({i + 1}, {j + 1})")
                seen[section][key] = value
                target = S if section == "S" else h
                target[i, j] = target[j, i] = value
    if d is None:
        raise IngestionError(f"{path}: missing 'HF d=... nocc=...' header")
    ints = IntegralSet(d=d, n_occ=n_occ, S=S, h=h,
                       g=chemists_to_internal(V), e_nuc=e_nuc)
    try:
        ints.validate()
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    return ints


def write_integrals(ints, path):
    """Write an IntegralSet in the interchange format.

    Only the upper triangle of S and H and one representative per
    two-electron symmetry orbit are written; re-ingesting reproduces the
    arrays bit for bit.
    """
    V = internal_to_chemists(ints.g)
    d = ints.d
    lines = [f"HF d={d} nocc={ints.n_occ} enuc={float(ints.e_nuc)!r}"]
    for name, M in (("S", ints.S), ("H", ints.h)):
        lines.append(name)
        for i in range(d):
            for j in range(i, d):
                if M[i, j] != 0.0:
                    lines.append(f"{i + 1} {j + 1} {float(M[i, j])!r}")
    lines.append("G")
    written = set()
    for idx in np.ndindex(d, d, d, d):
        if V[idx] == 0.0:
            continue
        key = min(_orbit(idx))
        if key in written:
            continue
        written.add(key)
        i, j, k, l = key
        lines.append(f"{i + 1} {j + 1} {k + 1} {l + 1} {float(V[key])!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_coefficient_file(path):
    """Whitespace-separated matrix of initial-guess coefficients."""
    try:
        C = np.loadtxt(path, ndmin=2)
    except Exception as exc:
        raise IngestionError(f"{path}: cannot read coefficient matrix: {exc}")
    return C


@dataclass(frozen=True)
class BrockettSpec:
    d: int
    n: int
    eigenvalues: tuple
    s_kind: str = "identity"  # identity | random_spd
    seed: int = 0
    rotate: bool = True


@dataclass(frozen=True)
class ProblemEntry:
    id: str
    integrals_path: str | None = None
    brockett: BrockettSpec | None = None
    guess: str = "default"
    guess_path: str | None = None
    guess_t: float = 0.1
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ProblemManifest:
    problems: tuple
    defaults: dict = field(default_factory=dict)
    base_dir: str = "."


OVERRIDE_KEYS = ("method", "hessian_mode", "grad_tol", "max_iter", "delta",
                 "seed", "record_spectrum")


def load_manifest(path):
    """Parse a TOML problem manifest and check ids and referenced files."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise IngestionError(f"manifest not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise IngestionError(f"{path}: invalid TOML: {exc}")
    base_dir = os.path.dirname(os.path.abspath(path))
    defaults = {k: data[k] for k in OVERRIDE_KEYS if k in data}
    entries = []
    ids = set()
    for i, raw in enumerate(data.get("problems", [])):
        pid = raw.get("id")
        if not pid:
            raise IngestionError(f"{path}: problem #{i + 1} has no id")
        if pid in ids:
            raise IngestionError(f"{path}: duplicate problem id {pid!r}")
        ids.add(pid)
        overrides = {k: raw[k] for k in OVERRIDE_KEYS if k in raw}
        brockett = None
        integrals_path = None
        if "brockett" in raw:
            b = raw["brockett"]
            try:
                brockett = BrockettSpec(
                    d=int(b["d"]), n=int(b["n"]),
                    eigenvalues=tuple(float(x) for x in b["eigenvalues"]),
                    s_kind=b.get("s", "identity"),
                    seed=int(b.get("seed", 0)),
                    rotate=bool(b.get("rotate", True)),
                )
            except KeyError as exc:
                raise IngestionError(f"{path}: problem {pid!r}: missing {exc}")
            if len(brockett.eigenvalues) != brockett.d:
                raise IngestionError(
                    f"{path}: problem {pid!r}: need {brockett.d} eigenvalues")
            if brockett.s_kind not in ("identity", "random_spd"):
                raise IngestionError(
                    f"{path}: problem {pid!r}: unknown S kind {brockett.s_kind!r}")
        elif "integrals" in raw:
            integrals_path = os.path.join(base_dir, raw["integrals"])
            if not os.path.exists(integrals_path):
                raise IngestionError(
                    f"{path}: problem {pid!r}: integrals file not found: "
                    f"{integrals_path}")
        else:
            raise IngestionError(
                f"{path}: problem {pid!r} needs 'integrals' or 'brockett'")
        guess = raw.get("guess", "default")
        guess_path = None
        if isinstance(guess, dict):
            guess_path = guess.get("path")
            guess_t = float(guess.get("t", 0.1))
            guess = guess.get("kind", "default")
        else:
            guess_t = 0.1
        if guess_path is not None:
            guess_path = os.path.join(base_dir, guess_path)
            if not os.path.exists(guess_path):
                raise IngestionError(
                    f"{path}: problem {pid!r}: guess file not found: {guess_path}")
        entries.append(ProblemEntry(
            id=pid, integrals_path=integrals_path, brockett=brockett,
            guess=guess, guess_path=guess_path, guess_t=guess_t,
            overrides=overrides))
    if not entries:
        raise IngestionError(f"{path}: manifest lists no problems")
    return ProblemManifest(problems=tuple(entries), defaults=defaults,
                           base_dir=base_dir)


def atomic_write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path, fieldnames, rows):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row.get(k)) for k in fieldnames})
    os.replace(tmp, path)


def _csv_value(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return x


SUMMARY_FIELDS = ("molecule_id", "method", "hessian_mode", "delta", "status",
                  "n_iter", "final_value", "final_grad_norm", "wall_time_s")


def write_summary_csv(rows, path):
    write_csv(path, SUMMARY_FIELDS, rows)


def read_summary_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_trace(trace, path):
    atomic_write_text(path, trace.to_jsonl())


def read_trace_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_spectrum_csv(comparison, path):
    rows = []
    n_lead = comparison.eigs_gr.size
    for i, lam_st in enumerate(comparison.eigs_st):
        rows.append({
            "index": i,
            "lambda_gr": float(comparison.eigs_gr[i]) if i < n_lead else None,
            "lambda_st": float(lam_st),
            "overlap": float(comparison.overlaps[i]) if i < n_lead else None,
            "residual_projection": (
                float(comparison.residual_projections[i - n_lead])
                if i >= n_lead else None),
        })
    write_csv(path, ("index", "lambda_gr", "lambda_st", "overlap",
                     "residual_projection"), rows)


def write_d_csv(d_by_problem, path):
    rows = [{"molecule_id": pid, "rms_difference": val}
            for pid, val in sorted(d_by_problem.items())]
    write_csv(path, ("molecule_id", "rms_difference"), rows)


def write_outcomes_csv(nmap, path):
    write_csv(path, ("direction", "t", "outcome", "iterations"),
              nmap.outcome_rows())


RADII_FIELDS = ("molecule_id", "method", "r_min", "r_avg", "r_max",
                "q1", "median", "q3")


def write_radii_csv(rows, path):
    write_csv(path, RADII_FIELDS, rows)


def read_radii_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_profile_csv(profile, path):
    rows = []
    for method in profile.methods:
        for tau, rho in profile.breakpoints[method]:
            rows.append({"method": method, "tau": tau, "rho": rho})
    write_csv(path, ("method", "tau", "rho"), rows)


def write_statistics_csv(stat_rows, path):
    fields = ["method", "delta", "n_total", "n_converged", "fraction",
              "mean_iterations"]
    rows = [{**{"delta": None}, **row} for row in stat_rows]
    write_csv(path, fields, rows)
