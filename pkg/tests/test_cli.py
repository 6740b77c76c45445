"""End-to-end command-line runs, in process via cli.main()."""

import json

import numpy as np
import pytest

import dynamo
from dynamo import cli
from dynamo import fields as df
from dynamo import glue


def run(args, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main(list(args) + ["--out", str(out)])
    manifest = None
    if (out / "manifest.json").exists():
        manifest = json.loads((out / "manifest.json").read_text())
    return code, out, manifest


class TestAlphaMatrix:
    def test_abc_example_eigenvalues(self, tmp_path):
        code, out, manifest = run(
            ["alpha", "matrix", "--abc", "1,1,1", "--delta0", "0.05",
             "--j", "1,0,0"], tmp_path)
        assert code == 0
        ev = sorted(e["re"] for e in manifest["report"]["eigenvalues"])
        assert ev[1] == pytest.approx(0.0, abs=1e-10)
        assert ev[2] == pytest.approx(0.0025, abs=1e-4)
        assert ev[0] == pytest.approx(-ev[2], abs=1e-12)
        rows = (out / "eigenvalues.csv").read_text().splitlines()
        assert rows[0] == "index,re,im"
        assert len(rows) == 4

    def test_csv_bit_identical_across_runs(self, tmp_path):
        _, out1, _ = run(["alpha", "matrix", "--abc", "1,1,1",
                          "--delta0", "0.05", "--j", "1,0,0"], tmp_path, "a")
        _, out2, _ = run(["alpha", "matrix", "--abc", "1,1,1",
                          "--delta0", "0.05", "--j", "1,0,0"], tmp_path, "b")
        for name in ("eigenvalues.csv", "alpha_matrix.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_malformed_triple_exits_2(self, tmp_path):
        code, out, _ = run(["alpha", "matrix", "--abc", "1,1", "--j", "1,0,0"],
                           tmp_path)
        assert code == 2
        assert not (out / "eigenvalues.csv").exists()

    def test_flow_and_abc_together_exit_2(self, tmp_path):
        code, _, _ = run(
            ["alpha", "matrix", "--abc", "1,1,1", "--flow-file", "x.field",
             "--j", "1,0,0"], tmp_path)
        assert code == 2


class TestAlphaScan:
    def test_axes_scan_certifies_instability(self, tmp_path):
        code, out, manifest = run(
            ["alpha", "scan", "--abc", "1,1,1", "--delta0", "0.05",
             "--directions", "axes"], tmp_path)
        assert code == 0
        rep = manifest["report"]
        assert rep["certified"] is True
        assert rep["directions"] == 6
        assert rep["best_eigenvalue"]["re"] > 1e-4
        header = (out / "scan.csv").read_text().splitlines()[0]
        assert header.startswith("d1,d2,d3,mu1_re")


class TestFieldMakeAbc:
    def test_zero_amplitudes_give_valid_snapshot(self, tmp_path):
        code, out, manifest = run(["field", "make-abc", "--abc", "0,0,0"],
                                  tmp_path)
        assert code == 0
        assert manifest["report"]["modes"] == 0
        f = df.load_field(out / "flow.field")
        assert f.l2() == 0.0

    def test_snapshot_round_trips_the_flow(self, tmp_path):
        code, out, _ = run(["field", "make-abc", "--abc", "1,0.9,1.1",
                            "--delta0", "0.3"], tmp_path)
        assert code == 0
        f = df.load_field(out / "flow.field")
        ref = df.make_abc(df.AbcParams(1.0, 0.9, 1.1))
        np.testing.assert_array_equal(f.coeffs, ref.coeffs * 0.3)


class TestSpectrum:
    def test_eigs_leading_pair(self, tmp_path):
        code, out, manifest = run(
            ["spectrum", "eigs", "--abc", "1,1,1", "--delta0", "0.3",
             "--j", "0,0,0.045", "--truncation", "2", "--count", "4"],
            tmp_path)
        assert code == 0
        assert manifest["report"]["leading"]["re"] == pytest.approx(
            0.0015294, abs=2e-6)
        assert manifest["report"]["leading_residual"] < 1e-10
        assert len((out / "eigs.csv").read_text().splitlines()) == 5

    def test_kato_slope_near_two(self, tmp_path):
        code, _, manifest = run(
            ["spectrum", "kato", "--abc", "1,1,1", "--delta0", "0.05",
             "--jmags", "0.02,0.01,0.005", "--truncation", "2"], tmp_path)
        assert code == 0
        assert manifest["report"]["slope"] >= 1.8


class TestEvolve:
    def test_growth_matches_leading_eigenvalue(self, tmp_path):
        code, out, manifest = run(
            ["evolve", "--abc", "1,1,1", "--delta0", "0.3", "--j", "0,0,0.045",
             "--t-end", "5", "--truncation", "2"], tmp_path)
        assert code == 0
        rep = manifest["report"]
        assert rep["gamma"] == pytest.approx(0.0015294, rel=0.05)
        assert rep["bounds_ok"] is True
        assert rep["min_slack_growth"] >= -1e-6
        trace = (out / "trace.csv").read_text().splitlines()
        assert len(trace) == rep["samples"] + 1


class TestBloch:
    def test_parseval_decreasing_inside_horizon(self, tmp_path):
        code, _, manifest = run(
            ["bloch", "parseval", "--abc", "1,1,1", "--delta0", "0.3",
             "--j-star", "0,0,0.1", "--half-width", "0.1",
             "--truncation", "1", "--nodes-per-axis", "5",
             "--r-max", "40", "--num", "5"], tmp_path)
        assert code == 0
        assert manifest["report"]["decreasing"] is True
        assert manifest["report"]["total_mass"] == pytest.approx(1.0)

    def test_synth_writes_volume(self, tmp_path):
        code, out, manifest = run(
            ["bloch", "synth", "--abc", "1,1,1", "--delta0", "0.3",
             "--j-star", "0,0,0.1", "--half-width", "0.1",
             "--truncation", "1", "--nodes-per-axis", "3",
             "--grid-half", "2", "--grid-spacing", "0.5"], tmp_path)
        assert code == 0
        assert manifest["report"]["nodes"] == 54
        vol = __import__("dynamo.bloch", fromlist=["load_volume"]).load_volume(
            out / "volume.vol")
        m = manifest["report"]["grid_points"]
        assert vol.values.shape[0] ** 3 == m

    def test_degenerate_band_exits_3_with_manifest(self, tmp_path):
        code, out, manifest = run(
            ["bloch", "synth", "--abc", "1,1,1", "--delta0", "0.3",
             "--j-star", "0,0,0", "--half-width", "0.05",
             "--truncation", "1", "--nodes-per-axis", "1",
             "--grid-half", "1", "--grid-spacing", "0.5"], tmp_path)
        assert code == 3
        assert manifest["status"] == "numerical-failure"
        assert "BandBroken" in manifest["error"]
        assert manifest["report"] is None


class TestGlue:
    def test_build_then_check_round_trip(self, tmp_path):
        code, out, manifest = run(
            ["glue", "build", "--abc", "0.3,0.3,0.3",
             "--tail-coefficient", "12.2", "--ufrak", "10",
             "--n-max", "1", "--ell-max", "1"], tmp_path, "build")
        assert code == 0
        assert manifest["report"]["blocks"] == 1
        catalog = glue.load_catalog(out / "catalog.txt")
        assert catalog.ufrak == 10.0
        code2, out2, manifest2 = run(
            ["glue", "check", "--catalog", str(out / "catalog.txt")],
            tmp_path, "check")
        assert code2 == 0
        assert manifest2["report"]["passed"] is True
        assert manifest2["report"]["failures"] == []
        header = (out2 / "checks.csv").read_text().splitlines()[0]
        assert header == "name,kind,measured,bound,margin,passed"

    def test_failing_checks_still_exit_0(self, tmp_path):
        code, out, _ = run(
            ["glue", "build", "--abc", "0.3,0.3,0.3",
             "--tail-coefficient", "12.2", "--ufrak", "1",
             "--n-max", "1", "--ell-max", "1"], tmp_path, "build")
        assert code == 0
        code2, _, manifest2 = run(
            ["glue", "check", "--catalog", str(out / "catalog.txt")],
            tmp_path, "check")
        assert code2 == 0
        assert manifest2["report"]["passed"] is False
        assert "hypothesis-floor" in manifest2["report"]["failures"]


class TestConfigAndEnvironment:
    def test_config_file_supplies_required_flag(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"j": "1,0,0", "delta0": 0.05}))
        code, _, manifest = run(
            ["alpha", "matrix", "--abc", "1,1,1", "--config", str(cfg)],
            tmp_path)
        assert code == 0
        assert manifest["config"]["delta0"] == 0.05
        assert manifest["config"]["j"] == "1,0,0"

    def test_explicit_flag_beats_config_value(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"j": "1,0,0", "delta0": 0.05}))
        code, _, manifest = run(
            ["alpha", "matrix", "--abc", "1,1,1", "--config", str(cfg),
             "--delta0", "0.3"], tmp_path)
        assert code == 0
        assert manifest["config"]["delta0"] == 0.3

    def test_unknown_config_key_exits_2(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"j": "1,0,0", "detla0": 0.05}))
        code = cli.main(["alpha", "matrix", "--abc", "1,1,1",
                         "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_config_must_be_object(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]")
        code = cli.main(["alpha", "matrix", "--abc", "1,1,1", "--j", "1,0,0",
                         "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_outdir_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTDIR_ENV, str(tmp_path / "env-out"))
        code = cli.main(["field", "make-abc", "--abc", "1,1,1"])
        assert code == 0
        assert (tmp_path / "env-out" / "flow.field").exists()

    def test_out_flag_beats_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTDIR_ENV, str(tmp_path / "env-out"))
        code = cli.main(["field", "make-abc", "--abc", "1,1,1",
                         "--out", str(tmp_path / "flag-out")])
        assert code == 0
        assert (tmp_path / "flag-out" / "flow.field").exists()
        assert not (tmp_path / "env-out").exists()


class TestManifest:
    def test_manifest_records_provenance(self, tmp_path):
        code, _, manifest = run(
            ["field", "make-abc", "--abc", "1,1,1", "--seed", "7"], tmp_path)
        assert code == 0
        assert manifest["subcommand"] == "field make-abc"
        assert manifest["seed"] == 7
        assert manifest["toolkit_version"] == dynamo.__version__
        assert manifest["wall_time_s"] > 0.0
        assert manifest["status"] == "ok"
        assert manifest["config"]["abc"] == "1,1,1"
