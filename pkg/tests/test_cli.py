"""Command-line pipeline: classify, evaluate, synth, theory, render."""

import json

import numpy as np
import pytest

from hsembed.cli import default_palette, main, read_ppm, render_map


@pytest.fixture()
def scene_config(tmp_path):
    cfg = {
        "seed": 11,
        "data": {
            "synthetic": {
                "height": 14,
                "width": 14,
                "bands": 5,
                "classes": 3,
                "region_scale": 5.0,
                "noise_sigma": 0.1,
                "seed": 11,
            }
        },
        "method": "meanmap",
        "embedding": {"patch_side": 3, "n_features": 32},
        "svm": {"c": 32.0},
        "protocol": {"runs": 2, "per_class": 5},
        "output_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, tmp_path / "out", cfg


class TestRender:
    def test_single_black_pixel_bytes(self, tmp_path):
        # byte-level oracle from the P6 grammar:
        # "P6\n<w> <h>\n255\n" header then 3 payload bytes
        out = tmp_path / "one.ppm"
        render_map(np.array([[0]]), default_palette(1), out)
        assert out.read_bytes() == b"P6\n1 1\n255\n\x00\x00\x00"

    def test_palette_bijective_on_reread(self, tmp_path):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 5, size=(9, 7))
        palette = default_palette(4)
        out = tmp_path / "map.ppm"
        render_map(labels, palette, out)
        pixels = read_ppm(out)
        assert pixels.shape == (9, 7, 3)
        for label in range(5):
            mask = labels == label
            if mask.any():
                expected = np.array(palette[label], dtype=np.uint8)
                assert np.all(pixels[mask] == expected)
        # distinct labels map to distinct colors
        colors = {tuple(c) for c in pixels.reshape(-1, 3)}
        assert len(colors) == len(np.unique(labels))

    def test_uniform_map(self, tmp_path):
        out = tmp_path / "uniform.ppm"
        render_map(np.full((4, 4), 2), default_palette(3), out)
        pixels = read_ppm(out)
        assert len({tuple(c) for c in pixels.reshape(-1, 3)}) == 1

    def test_label_out_of_palette(self, tmp_path):
        from hsembed import ContractViolation

        with pytest.raises(ContractViolation):
            render_map(np.array([[7]]), default_palette(3), tmp_path / "bad.ppm")

    def test_default_palette_properties(self):
        palette = default_palette(20)
        assert palette[0] == (0, 0, 0)
        assert len(palette) == 21
        assert len(set(palette)) == 21

    def test_render_command(self, tmp_path):
        labels = tmp_path / "labels.csv"
        labels.write_text("0,1\n2,1\n")
        out = tmp_path / "render.ppm"
        assert main(["render", "--labels", str(labels), "--output", str(out)]) == 0
        assert read_ppm(out).shape == (2, 2, 3)


class TestClassify:
    def test_smoke_and_outputs(self, scene_config):
        config, out, _ = scene_config
        assert main(["classify", "--config", str(config)]) == 0
        assert (out / "map.ppm").is_file()
        assert (out / "predictions.csv").is_file()
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["method"] == "meanmap"
        assert 0.0 <= metrics["mean"]["oa"] <= 100.0

    def test_byte_identical_reruns(self, scene_config):
        config, out, _ = scene_config
        assert main(["classify", "--config", str(config)]) == 0
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert main(["classify", "--config", str(config)]) == 0
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second

    def test_tensor_cap_exit_code_and_message(self, tmp_path, scene_config, capsys):
        _, _, cfg = scene_config
        cfg["method"] = "mp_x_meanmap"
        cfg["embedding"]["n_features"] = 512
        cfg["embedding"]["tensor_cap"] = 1000
        cfg["mp"] = {"pca_dims": 2, "n_scales": 1}
        path = tmp_path / "over.json"
        path.write_text(json.dumps(cfg))
        code = main(["classify", "--config", str(path)])
        assert code == 1
        assert "1000" in capsys.readouterr().err

    def test_flag_overrides_change_output(self, scene_config):
        config, out, _ = scene_config
        assert main(["classify", "--config", str(config), "--method", "raw"]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["method"] == "raw"


class TestEvaluate:
    def test_metrics_schema_and_table(self, scene_config):
        config, out, _ = scene_config
        assert main(["evaluate", "--config", str(config)]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert set(metrics) >= {"method", "params", "runs", "mean", "std"}
        assert len(metrics["runs"]) == 2
        for run in metrics["runs"]:
            assert set(run) == {"oa", "aa", "kappa"}
        table = (out / "table.txt").read_text()
        assert "kernel" in table and "OA" in table

    def test_deterministic(self, scene_config):
        config, out, _ = scene_config
        assert main(["evaluate", "--config", str(config)]) == 0
        first = (out / "metrics.json").read_bytes()
        assert main(["evaluate", "--config", str(config)]) == 0
        assert (out / "metrics.json").read_bytes() == first


class TestSynth:
    def test_writes_scene_and_round_trips(self, tmp_path):
        spec = {"height": 8, "width": 9, "bands": 4, "classes": 2,
                "region_scale": 4.0, "noise_sigma": 0.2, "seed": 3}
        cfg = tmp_path / "scene.json"
        cfg.write_text(json.dumps(spec))
        out = tmp_path / "scene_out"
        assert main(["synth", "--config", str(cfg), "--output", str(out)]) == 0
        from hsembed import load_envi, load_ground_truth

        image = load_envi(out / "scene.hdr")
        assert (image.height, image.width, image.bands) == (8, 9, 4)
        gt = load_ground_truth(out / "gt.csv", 8, 9)
        assert gt.n_classes == 2


class TestTheory:
    def test_reports_written_with_slack(self, tmp_path):
        cfg = tmp_path / "theory.json"
        cfg.write_text(json.dumps({
            "seed": 5,
            "meta": {"n_groups": 5, "group_size": 8, "dim": 3},
            "features": {"count": 32},
            "predictors": {"count": 5, "norm_low": 50.0, "norm_high": 100.0},
            "trials": 2,
            "bound": {"rademacher_draws": 200, "holdout_draws": 500,
                      "dictionary_size": 32},
        }))
        out = tmp_path / "theory_out"
        assert main(["theory", "--config", str(cfg), "--output", str(out)]) == 0
        gap = json.loads((out / "embedding_gap_bound.json").read_text())
        assert gap["predictors"] == 5
        assert all("slack" in r for r in gap["reports"])
        combined = json.loads((out / "combined_risk_bound.json").read_text())
        assert combined["trials"] == 2
        assert all("slack" in r for r in combined["reports"])
        gap_text = (out / "embedding_gap_bound.txt").read_text()
        assert "slack" in gap_text and "components" in gap_text
        combined_text = (out / "combined_risk_bound.txt").read_text()
        assert "moment_term" in combined_text

    def test_deterministic(self, tmp_path):
        cfg = tmp_path / "theory.json"
        cfg.write_text(json.dumps({
            "seed": 6,
            "meta": {"n_groups": 4, "group_size": 8, "dim": 3},
            "features": {"count": 16},
            "predictors": {"count": 3},
            "trials": 1,
            "bound": {"rademacher_draws": 100, "holdout_draws": 200,
                      "dictionary_size": 16},
        }))
        out = tmp_path / "theory_out"
        assert main(["theory", "--config", str(cfg), "--output", str(out)]) == 0
        first = (out / "combined_risk_bound.json").read_bytes()
        assert main(["theory", "--config", str(cfg), "--output", str(out)]) == 0
        assert (out / "combined_risk_bound.json").read_bytes() == first


class TestOutputDirEnvVar:
    def test_env_var_supplies_default_output_dir(self, tmp_path, monkeypatch, scene_config):
        config, _, cfg = scene_config
        cfg.pop("output_dir")
        path = tmp_path / "noout.json"
        path.write_text(json.dumps(cfg))
        env_out = tmp_path / "from_env"
        monkeypatch.setenv("HSEMBED_OUT", str(env_out))
        assert main(["classify", "--config", str(path)]) == 0
        assert (env_out / "metrics.json").is_file()


class TestExitCodes:
    def test_usage_error_is_one(self):
        assert main(["classify"]) == 1  # missing --config
        assert main(["notacommand"]) == 1

    def test_numerical_error_maps_to_three(self):
        from hsembed import NumericalError
        from hsembed.cli import _exit_code_for
        from hsembed.errors import StageError

        assert _exit_code_for(NumericalError("nan")) == 3
        assert _exit_code_for(StageError("train", NumericalError("nan"))) == 3

    def test_missing_config_file_is_one(self, tmp_path):
        assert main(["classify", "--config", str(tmp_path / "absent.json")]) == 1

    def test_data_error_is_two(self, tmp_path, capsys):
        cfg = {
            "seed": 1,
            "data": {"image": str(tmp_path / "missing.hdr"),
                     "ground_truth": str(tmp_path / "missing.csv")},
            "method": "raw",
            "svm": {"c": 1.0},
            "protocol": {"runs": 1, "per_class": 2},
            "output_dir": str(tmp_path / "out"),
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        assert main(["classify", "--config", str(path)]) == 2
        assert "stage 'data'" in capsys.readouterr().err
