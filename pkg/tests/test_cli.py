import json
import subprocess
import sys

import numpy as np
import pytest

from tpt_calib.cli import main
from tpt_calib.features import FeatureBundle
from tpt_calib.io import read_bundle, read_predictions, write_bundle


def synth_args(out, **over):
    args = {"--dim": 16, "--classes": 5, "--prompt-dim": 3, "--samples": 12,
            "--views": 3, "--tau": 12.0, "--seed": 0}
    args.update(over)
    argv = ["synth", "--out", str(out)]
    for k, v in args.items():
        argv += [k, str(v)]
    return argv


@pytest.fixture
def bundle_path(tmp_path):
    path = tmp_path / "b.tptb"
    assert main(synth_args(path)) == 0
    return path


class TestSynthAndRun:
    def test_run_writes_predictions_and_report(self, bundle_path, tmp_path, capsys):
        preds = tmp_path / "p.jsonl"
        report = tmp_path / "r.json"
        code = main(["run", "--bundle", str(bundle_path), "--method", "zeroshot",
                     "--out-predictions", str(preds), "--out-report", str(report),
                     "--threads", "1"])
        assert code == 0
        out = capsys.readouterr().out
        assert "acc" in out and "aurc(x1e3)" in out
        records, methods = read_predictions(preds)
        assert len(records) == 12
        assert set(methods) == {"zeroshot"}
        parsed = json.loads(report.read_text())
        assert 0.0 <= parsed["ece"]["raw"] <= 1.0

    def test_lambda_zero_dumps_match_tpt(self, bundle_path, tmp_path):
        p1, p2 = tmp_path / "tpt.jsonl", tmp_path / "dtpt.jsonl"
        base = ["--bundle", str(bundle_path), "--threads", "1", "--rho", "0.5"]
        assert main(["run"] + base + ["--method", "tpt",
                                      "--out-predictions", str(p1)]) == 0
        assert main(["run"] + base + ["--method", "dtpt", "--lambda", "0",
                                      "--out-predictions", str(p2)]) == 0
        r1, _ = read_predictions(p1)
        r2, _ = read_predictions(p2)
        assert r1 == r2

    def test_steps_zero_equals_zeroshot(self, bundle_path, tmp_path):
        p1, p2 = tmp_path / "zs.jsonl", tmp_path / "d0.jsonl"
        base = ["--bundle", str(bundle_path), "--threads", "1"]
        assert main(["run"] + base + ["--method", "zeroshot",
                                      "--out-predictions", str(p1)]) == 0
        assert main(["run"] + base + ["--method", "dtpt", "--steps", "0",
                                      "--out-predictions", str(p2)]) == 0
        r1, _ = read_predictions(p1)
        r2, _ = read_predictions(p2)
        assert r1 == r2

    def test_deterministic_across_thread_counts(self, bundle_path, tmp_path):
        p1, p2 = tmp_path / "t1.jsonl", tmp_path / "t8.jsonl"
        base = ["--bundle", str(bundle_path), "--method", "dtpt"]
        assert main(["run"] + base + ["--threads", "1",
                                      "--out-predictions", str(p1)]) == 0
        assert main(["run"] + base + ["--threads", "8",
                                      "--out-predictions", str(p2)]) == 0
        assert p1.read_bytes() == p2.read_bytes()

    def test_tau_override(self, bundle_path, capsys):
        assert main(["diagnose", "--bundle", str(bundle_path)]) == 0
        base_out = capsys.readouterr().out
        assert main(["diagnose", "--bundle", str(bundle_path),
                     "--tau-override", "24.0"]) == 0
        assert capsys.readouterr().out != base_out


class TestMetricsAndReliability:
    def test_metrics_match_run_report(self, bundle_path, tmp_path, capsys):
        preds = tmp_path / "p.jsonl"
        report1 = tmp_path / "r1.json"
        main(["run", "--bundle", str(bundle_path), "--method", "tpt",
              "--threads", "1", "--out-predictions", str(preds),
              "--out-report", str(report1)])
        capsys.readouterr()
        report2 = tmp_path / "r2.json"
        assert main(["metrics", "--predictions", str(preds),
                     "--out-report", str(report2)]) == 0
        a = json.loads(report1.read_text())
        b = json.loads(report2.read_text())
        for key in ("accuracy", "ece", "aece", "mce", "aurc"):
            assert a[key] == b[key]

    def test_reliability_outputs(self, bundle_path, tmp_path):
        preds = tmp_path / "p.jsonl"
        main(["run", "--bundle", str(bundle_path), "--method", "zeroshot",
              "--threads", "1", "--out-predictions", str(preds)])
        csv_path = tmp_path / "bins.csv"
        svg_path = tmp_path / "rd.svg"
        assert main(["reliability", "--predictions", str(preds),
                     "--csv", str(csv_path), "--svg", str(svg_path)]) == 0
        assert csv_path.read_text().startswith("bin_lower")
        assert "<svg" in svg_path.read_text()


class TestAnalysisCommands:
    def test_sensitivity_recovers_injected_dims(self, tmp_path, capsys):
        path = tmp_path / "dom.tptb"
        main(synth_args(path, **{"--dominant-dim-text": 4,
                                 "--dominant-dim-image": 4,
                                 "--dominant-magnitude": 6.0,
                                 "--samples": 6}))
        capsys.readouterr()
        out_json = tmp_path / "profile.json"
        assert main(["sensitivity", "--bundle", str(path),
                     "--out", str(out_json)]) == 0
        out = capsys.readouterr().out
        assert "tdd=4 idd=4" in out
        payload = json.loads(out_json.read_text())
        assert payload["text_top_k"][0][0] == 4

    def test_ablate_noop_on_constant_dominant_dim(self, tmp_path, capsys):
        # identical rows: every dimension constant, so replacement is identity
        row = np.array([0.6, 0.0, 0.8, 0.0], dtype=np.float32)
        bundle = FeatureBundle.from_arrays(
            ["a", "b", "c"], 10.0, np.tile(row, (3, 1)), np.zeros((3, 4, 2)),
            [0, 1, 2, 0], np.tile(row, (4, 2, 1)))
        path = tmp_path / "const.tptb"
        write_bundle(bundle, path)
        assert main(["ablate", "--bundle", str(path), "--target", "tdd",
                     "--method", "zeroshot", "--threads", "1"]) == 0
        lines = [ln.split() for ln in capsys.readouterr().out.splitlines()[1:]]
        assert lines[0][-2:] == lines[1][-2:]  # acc/ece columns identical

    def test_diagnose_prints_identity(self, bundle_path, capsys):
        assert main(["diagnose", "--bundle", str(bundle_path)]) == 0
        out = capsys.readouterr().out
        values = {line.split()[0]: float(line.split()[1])
                  for line in out.strip().splitlines()}
        assert values["mean_logit_value"] == pytest.approx(
            12.0 * values["mean_cross_cosine"], rel=1e-4)


class TestExitCodes:
    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["run"])  # --bundle missing
        assert exc.value.code == 2

    def test_bad_config_value_exits_2(self, bundle_path):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--bundle", str(bundle_path), "--method", "dtpt",
                  "--lambda", "-5"])
        assert exc.value.code == 2

    def test_corrupted_bundle_exits_3(self, tmp_path):
        path = tmp_path / "bad.tptb"
        path.write_bytes(b"JUNKJUNKJUNK")
        assert main(["run", "--bundle", str(path), "--method", "zeroshot",
                     "--threads", "1"]) == 3

    def test_degenerate_masking_exits_4(self, tmp_path):
        base = np.eye(2, dtype=np.float32)
        imgs = np.tile(np.array([1.0, 0.0], dtype=np.float32), (2, 1, 1))
        bundle = FeatureBundle.from_arrays(["a", "b"], 5.0, base,
                                           np.zeros((2, 2, 1)), [0, 1], imgs)
        path = tmp_path / "axis.tptb"
        write_bundle(bundle, path)
        assert main(["sensitivity", "--bundle", str(path)]) == 4

    def test_missing_predictions_file_is_not_a_crash(self, tmp_path):
        missing = tmp_path / "nope.jsonl"
        with pytest.raises((SystemExit, FileNotFoundError)):
            main(["metrics", "--predictions", str(missing)])


class TestHelpAndDefaults:
    def test_run_help_shows_protocol_defaults(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "--lambda" in out and "100000" in out
        assert "0.005" in out   # lr
        assert "0.1" in out     # rho
        assert "--rho" in out and "--tau-override" in out
        assert "default: 20" in out or "(default: 20)" in out  # bins

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "tpt_calib", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.strip()

    def test_threads_env_fallback(self, bundle_path, tmp_path, monkeypatch):
        monkeypatch.setenv("TPT_CALIB_THREADS", "2")
        preds = tmp_path / "env.jsonl"
        assert main(["run", "--bundle", str(bundle_path), "--method", "dtpt",
                     "--out-predictions", str(preds)]) == 0
        monkeypatch.setenv("TPT_CALIB_THREADS", "1")
        preds1 = tmp_path / "env1.jsonl"
        assert main(["run", "--bundle", str(bundle_path), "--method", "dtpt",
                     "--out-predictions", str(preds1)]) == 0
        assert preds.read_bytes() == preds1.read_bytes()
