import numpy as np
import pytest

from conftest import synthetic_integral_set
from manifold_newton.costs import hf_energy
from manifold_newton.io import (
    IngestionError,
    chemists_to_internal,
    ingest_integrals,
    internal_to_chemists,
    load_manifest,
    read_summary_csv,
    read_trace_jsonl,
    write_integrals,
    write_summary_csv,
)

MINIMAL = """\
HF d=1 nocc=1 enuc=0.0
S
1 1 1.0
H
1 1 -1.0
G
1 1 1 1 0.5
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestIngestIntegrals:
    def test_minimal_file_energy(self, tmp_path):
        ints = ingest_integrals(write(tmp_path, "m.hfint", MINIMAL))
        assert hf_energy(ints, np.array([[1.0]])) == pytest.approx(-1.5)

    def test_upper_triangle_symmetrized(self, tmp_path):
        text = ("HF d=2 nocc=1 enuc=0.0\nS\n1 1 1.0\n1 2 0.25\n2 2 1.0\n"
                "H\n1 1 -1.0\n2 2 -1.0\nG\n")
        ints = ingest_integrals(write(tmp_path, "t.hfint", text))
        assert ints.S[1, 0] == 0.25
        np.testing.assert_array_equal(ints.S, ints.S.T)

    def test_g_record_populates_full_orbit(self, tmp_path):
        text = ("HF d=2 nocc=1 enuc=0.0\nS\n1 1 1.0\n2 2 1.0\n"
                "H\n1 1 -1.0\n2 2 -1.0\nG\n1 2 1 1 0.125\n")
        ints = ingest_integrals(write(tmp_path, "g.hfint", text))
        V = internal_to_chemists(ints.g)
        # chemists' record (12|11): all 8 symmetric slots carry the value
        expected_slots = {(0, 1, 0, 0), (1, 0, 0, 0), (0, 1, 0, 0),
                          (0, 0, 0, 1), (0, 0, 1, 0)}
        slots = {idx for idx in np.ndindex(2, 2, 2, 2) if V[idx] != 0.0}
        explicit = set()
        i, j, k, l = 0, 1, 0, 0
        for a, b in ((i, j), (j, i)):
            for c, d in ((k, l), (l, k)):
                explicit.add((a, b, c, d))
                explicit.add((c, d, a, b))
        assert slots == explicit
        assert len(slots) == 4  # degenerate orbit for this index pattern
        assert np.all(V[tuple(np.array(sorted(slots)).T)] == 0.125)

    def test_conflicting_duplicate_rejected(self, tmp_path):
        text = ("HF d=2 nocc=1 enuc=0.0\nS\n1 1 1.0\n2 2 1.0\n1 2 0.1\n"
                "2 1 0.2\nH\n1 1 -1.0\n2 2 -1.0\nG\n")
        with pytest.raises(IngestionError, match="conflicting"):
            ingest_integrals(write(tmp_path, "c.hfint", text))

    def test_parse_error_reports_line(self, tmp_path):
        text = "HF d=1 nocc=1 enuc=0.0\nS\n1 1 one\n"
        with pytest.raises(IngestionError, match=":3"):
            ingest_integrals(write(tmp_path, "p.hfint", text))

    def test_index_out_of_range(self, tmp_path):
        text = "HF d=1 nocc=1 enuc=0.0\nS\n1 2 0.5\n"
        with pytest.raises(IngestionError, match="out of range"):
            ingest_integrals(write(tmp_path, "r.hfint", text))

    def test_not_spd_rejected(self, tmp_path):
        text = ("HF d=2 nocc=1 enuc=0.0\nS\n1 1 1.0\n1 2 2.0\n2 2 1.0\n"
                "H\n1 1 -1.0\n2 2 -1.0\nG\n")
        with pytest.raises(IngestionError, match="positive-definite"):
            ingest_integrals(write(tmp_path, "spd.hfint", text))

    def test_missing_header(self, tmp_path):
        with pytest.raises(IngestionError, match="header"):
            ingest_integrals(write(tmp_path, "h.hfint", "S\n1 1 1.0\n"))

    def test_comments_and_blank_lines(self, tmp_path):
        text = "# a comment\n\n" + MINIMAL.replace("1 1 1.0", "1 1 1.0  # diag")
        ints = ingest_integrals(write(tmp_path, "cm.hfint", text))
        assert ints.S[0, 0] == 1.0


class TestRoundTrip:
    @pytest.mark.parametrize("seed,d,n", [(1, 4, 2), (2, 3, 1), (5, 5, 3)])
    def test_write_ingest_bit_identical(self, tmp_path, seed, d, n):
        ints = synthetic_integral_set(seed, d, n)
        path = tmp_path / "out.hfint"
        write_integrals(ints, str(path))
        back = ingest_integrals(str(path))
        assert np.array_equal(ints.S, back.S)
        assert np.array_equal(ints.h, back.h)
        assert np.array_equal(ints.g, back.g)
        assert ints.e_nuc == back.e_nuc
        assert (ints.d, ints.n_occ) == (back.d, back.n_occ)

    def test_convention_permutation_is_involution(self, rng):
        V = rng.standard_normal((3, 3, 3, 3))
        np.testing.assert_array_equal(
            internal_to_chemists(chemists_to_internal(V)), V)


class TestManifest:
    def test_loads_brockett_and_integrals(self, tmp_path):
        (tmp_path / "m.hfint").write_text(MINIMAL)
        manifest_text = """\
seed = 5
[[problems]]
id = "mol"
integrals = "m.hfint"

[[problems]]
id = "b1"
method = "mrnm_st"
[problems.brockett]
d = 4
n = 2
eigenvalues = [1.0, 2.0, 3.0, 4.0]
"""
        path = write(tmp_path, "m.toml", manifest_text)
        manifest = load_manifest(path)
        assert manifest.defaults == {"seed": 5}
        assert len(manifest.problems) == 2
        assert manifest.problems[0].integrals_path.endswith("m.hfint")
        assert manifest.problems[1].brockett.d == 4
        assert manifest.problems[1].overrides == {"method": "mrnm_st"}

    def test_duplicate_ids_rejected(self, tmp_path):
        text = ("[[problems]]\nid = \"a\"\n[problems.brockett]\nd = 2\nn = 1\n"
                "eigenvalues = [1.0, 2.0]\n"
                "[[problems]]\nid = \"a\"\n[problems.brockett]\nd = 2\nn = 1\n"
                "eigenvalues = [1.0, 2.0]\n")
        with pytest.raises(IngestionError, match="duplicate"):
            load_manifest(write(tmp_path, "d.toml", text))

    def test_missing_integral_file_rejected(self, tmp_path):
        text = "[[problems]]\nid = \"a\"\nintegrals = \"absent.hfint\"\n"
        with pytest.raises(IngestionError, match="not found"):
            load_manifest(write(tmp_path, "mi.toml", text))

    def test_eigenvalue_count_checked(self, tmp_path):
        text = ("[[problems]]\nid = \"a\"\n[problems.brockett]\nd = 3\nn = 1\n"
                "eigenvalues = [1.0, 2.0]\n")
        with pytest.raises(IngestionError, match="eigenvalues"):
            load_manifest(write(tmp_path, "e.toml", text))

    def test_empty_manifest_rejected(self, tmp_path):
        with pytest.raises(IngestionError, match="no problems"):
            load_manifest(write(tmp_path, "n.toml", "seed = 1\n"))


class TestCsv:
    def test_summary_roundtrip(self, tmp_path):
        rows = [{"molecule_id": "a", "method": "rnm_gr",
                 "hessian_mode": "intrinsic", "delta": 1e-8,
                 "status": "converged", "n_iter": 4, "final_value": -1.5,
                 "final_grad_norm": 1e-12, "wall_time_s": 0.1}]
        path = tmp_path / "summary.csv"
        write_summary_csv(rows, str(path))
        back = read_summary_csv(str(path))
        assert back[0]["molecule_id"] == "a"
        assert float(back[0]["final_value"]) == -1.5
        assert back[0]["status"] == "converged"
        header = path.read_text().splitlines()[0]
        assert header == ("molecule_id,method,hessian_mode,delta,status,"
                          "n_iter,final_value,final_grad_norm,wall_time_s")
