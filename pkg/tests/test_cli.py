"""End-to-end runs of the command line driver in a temp directory."""

import csv
import hashlib
import json
import math

import pytest

from shflab.cli import main
from shflab.delta_bose import j_eval
from shflab.diagrams import count_dgm, enumerate_dgm_star, enumerate_dgm_up


def run(tmp_path, *argv):
    out = tmp_path / "out"
    return main(list(argv) + ["--out", str(out)]), out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestBasicSubcommands:

    def test_beta_table(self, tmp_path):
        code, out = run(tmp_path, "beta", "--theta", "-0.5")
        assert code == 0
        rows = read_csv(out / "beta.csv")
        assert [float(r["epsilon"]) for r in rows] == [0.1, 0.05, 0.025,
                                                       0.0125]
        assert all(float(r["beta"]) > 0 for r in rows)
        man = json.loads((out / "beta-manifest.json").read_text())
        assert man["beta_audit"]["theta"] == -0.5
        assert man["subcommand"] == "beta"

    def test_jfun_single_row_matches_direct_eval(self, tmp_path):
        code, out = run(tmp_path, "jfun", "--theta", "0", "--t", "1")
        assert code == 0
        rows = read_csv(out / "jfun.csv")
        assert len(rows) == 1
        assert float(rows[0]["value"]) == j_eval(0.0, 1.0)

    def test_diagram_counts_match_enumerators(self, tmp_path):
        code, out = run(tmp_path, "diagrams")
        assert code == 0
        for row in read_csv(out / "diagrams.csv"):
            omega = tuple(range(1, int(row["omega_size"]) + 1))
            m = int(row["m"])
            assert int(row["dgm"]) == count_dgm(omega, m)
            assert int(row["dgm_star"]) == sum(
                1 for _ in enumerate_dgm_star(omega, m))
        man = json.loads((out / "diagrams-manifest.json").read_text())
        assert man["notes"]["dgm_up_4"] == 30.0
        assert sum(1 for _ in enumerate_dgm_up(4)) == 30

    def test_moment_exact(self, tmp_path):
        code, out = run(tmp_path, "moment-exact", "--n", "2",
                        "--t", "0.5")
        assert code == 0
        rows = read_csv(out / "moment_exact.csv")
        assert len(rows) == 1
        assert float(rows[0]["value"]) > 0

    def test_verify_scaling_passes(self, tmp_path):
        code, out = run(tmp_path, "verify-scaling", "--r", "2")
        assert code == 0
        rows = read_csv(out / "verify_scaling.csv")
        assert all(float(r["rel_error"]) <= 1e-6 for r in rows)

    def test_moment_fk_runs(self, tmp_path):
        code, out = run(tmp_path, "moment-fk", "--n", "2", "--eps", "0.2",
                        "--t", "0.2", "--paths", "1000", "--seed", "4")
        assert code == 0
        row = read_csv(out / "moment_fk.csv")[0]
        assert row["method"] == "fk"
        assert int(row["n_samples"]) == 1000
        assert float(row["value"]) > 0

    def test_moment_spde_runs(self, tmp_path):
        code, out = run(tmp_path, "moment-spde", "--n", "1",
                        "--eps", "0.2", "--t", "0.1", "--samples", "8",
                        "--set", "grid.n=32", "--set", "spde.batch=8")
        assert code == 0
        row = read_csv(out / "moment_spde.csv")[0]
        assert row["method"] == "spde"
        man = json.loads((out / "moment-spde-manifest.json").read_text())
        want = math.exp(-3.2**2 / (8 * 0.1))
        assert man["notes"]["image_bias_bound"] == pytest.approx(want)


class TestExitCodes:

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        code, _ = run(tmp_path, "beta", "--set", "coupling.bogus=1")
        assert code == 2
        assert "unknown key" in capsys.readouterr().err

    def test_bad_value_exits_2(self, tmp_path, capsys):
        code, _ = run(tmp_path, "moment-fk", "--eps", "1.5")
        assert code == 2
        assert "[coupling] epsilon" in capsys.readouterr().err

    def test_overflow_exits_3(self, tmp_path, capsys):
        # an absurd coupling offset drives the interaction weight past
        # the finite range, which must surface as a numeric failure
        code, _ = run(tmp_path, "moment-fk", "--n", "2", "--eps", "0.2",
                      "--t", "0.2", "--paths", "1000", "--seed", "4",
                      "--theta", "1e6")
        assert code == 3
        assert "numeric failure" in capsys.readouterr().err


class TestReproducibility:

    def test_csv_bytes_are_idempotent(self, tmp_path):
        code_a, out_a = main(["moment-fk", "--n", "2", "--eps", "0.2",
                              "--t", "0.2", "--paths", "1000",
                              "--seed", "11",
                              "--out", str(tmp_path / "a")]), tmp_path / "a"
        code_b, out_b = main(["moment-fk", "--n", "2", "--eps", "0.2",
                              "--t", "0.2", "--paths", "1000",
                              "--seed", "11",
                              "--out", str(tmp_path / "b")]), tmp_path / "b"
        assert code_a == code_b == 0
        assert ((out_a / "moment_fk.csv").read_bytes()
                == (out_b / "moment_fk.csv").read_bytes())

    def test_manifest_digests_match_outputs(self, tmp_path):
        code, out = run(tmp_path, "beta")
        assert code == 0
        man = json.loads((out / "beta-manifest.json").read_text())
        assert man["outputs"], "manifest must reference its outputs"
        for entry in man["outputs"]:
            data = (out / entry["path"]).read_bytes()
            assert hashlib.sha256(data).hexdigest() == entry["sha256"]
            assert entry["bytes"] == len(data)
        assert man["module_versions"]["cli"]
        assert man["config"]["run.master_seed"] == "1234"
