import json
from pathlib import Path

import pytest

from gpyield.cli import main
from gpyield.config import (
    ConfigError,
    build_run_config,
    default_waveguide_config,
    validate_raw_config,
)

REPO_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "waveguide.json"


def write_config(tmp_path, raw, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


def small_raw(n_samples=120, method="mc"):
    raw = default_waveguide_config()
    raw["estimator"]["n_samples"] = n_samples
    raw["estimator"]["method"] = method
    return raw


class TestValidation:
    def test_shipped_config_is_clean(self):
        raw = json.loads(REPO_CONFIG.read_text())
        assert validate_raw_config(raw) == []
        assert raw == default_waveguide_config()

    def test_zero_gamma_names_the_field(self):
        raw = default_waveguide_config()
        raw["estimator"]["safety_factor"] = 0.0
        paths = [p for p, _ in validate_raw_config(raw)]
        assert "estimator.safety_factor" in paths

    def test_crossed_bounds_name_the_distribution(self):
        raw = default_waveguide_config()
        raw["distribution"]["lower_bounds"][1] = 99.0
        diags = validate_raw_config(raw)
        assert any(p == "distribution" and "lower_bounds" in m for p, m in diags)

    def test_unknown_keys_rejected(self):
        raw = default_waveguide_config()
        raw["estimator"]["typo_key"] = 1
        raw["colour"] = "blue"
        paths = [p for p, _ in validate_raw_config(raw)]
        assert "estimator.typo_key" in paths
        assert "colour" in paths

    def test_missing_block_reported(self):
        raw = default_waveguide_config()
        del raw["frequency"]
        assert ("frequency", "missing required block") in validate_raw_config(raw)

    def test_bad_method(self):
        raw = default_waveguide_config()
        raw["estimator"]["method"] = "magic"
        assert any(p == "estimator.method" for p, _ in validate_raw_config(raw))

    def test_sorted_method_needs_sorting(self):
        raw = default_waveguide_config()
        raw["estimator"]["method"] = "gpr-hybrid-sorted"
        raw["estimator"]["sorting"] = "none"
        assert any(p == "estimator.sorting" for p, _ in validate_raw_config(raw))

    def test_blackbox_oracle_block(self):
        raw = default_waveguide_config()
        raw["oracle"] = {"kind": "blackbox", "command": ["solver", "--serve"]}
        assert validate_raw_config(raw) == []
        raw["oracle"] = {"kind": "blackbox"}
        assert any(p == "oracle.command" for p, _ in validate_raw_config(raw))

    def test_build_raises_config_error(self):
        raw = default_waveguide_config()
        raw["estimator"]["batch_size"] = 0
        with pytest.raises(ConfigError) as err:
            build_run_config(raw)
        assert any(p == "estimator.batch_size" for p, _ in err.value.diagnostics)

    def test_band_below_cutoff_is_flagged(self):
        raw = default_waveguide_config()
        raw["frequency"]["band_ghz"] = [4.0, 4.5]
        diags = validate_raw_config(raw)
        assert any(p == "frequency.band_ghz" and "evanescent" in m for p, m in diags)

    def test_blackbox_workdir_must_exist(self):
        raw = default_waveguide_config()
        raw["oracle"] = {"kind": "blackbox", "command": ["x"], "workdir": "/no/such/dir"}
        assert any(p == "oracle.workdir" for p, _ in validate_raw_config(raw))

    def test_wrong_dimension_for_waveguide(self):
        raw = default_waveguide_config()
        for key in ("mean", "covariance", "lower_bounds", "upper_bounds"):
            raw["distribution"][key] = raw["distribution"][key][:3]
        assert any("4 parameters" in m for _, m in validate_raw_config(raw))


class TestDomainAssembly:
    def test_round_trip_through_report_echo(self, tmp_path):
        config = build_run_config(small_raw())
        echoed = build_run_config(config.to_dict())
        assert echoed.raw == config.raw
        assert echoed.settings() == config.settings()

    def test_grid_matches_frequency_block(self):
        config = build_run_config(default_waveguide_config())
        grid = config.grid()
        assert len(grid) == 11
        assert grid.points[0] == pytest.approx(2 * 3.141592653589793 * 6.5e9)

    def test_settings_defaults(self):
        config = build_run_config(default_waveguide_config())
        settings = config.settings()
        assert settings.n_samples == 2500
        assert settings.safety_factor == 2.0
        assert settings.kernel.signal == 0.1
        assert settings.kernel.length_scale_bounds == (1e-5, 1e5)


class TestCli:
    def test_validate_shipped_config(self, capsys):
        assert main(["validate", str(REPO_CONFIG)]) == 0
        assert "valid" in capsys.readouterr().out

    def test_validate_reports_paths(self, tmp_path, capsys):
        raw = default_waveguide_config()
        raw["estimator"]["safety_factor"] = -1.0
        path = write_config(tmp_path, raw)
        assert main(["validate", str(path)]) == 2
        assert "estimator.safety_factor" in capsys.readouterr().out

    def test_missing_file_exits_2(self, capsys):
        assert main(["validate", "/nonexistent/nowhere.json"]) == 2
        assert main(["run", "/nonexistent/nowhere.json"]) == 2

    def test_non_json_exits_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("not json at all {", encoding="utf-8")
        assert main(["validate", str(path)]) == 2
        assert main(["run", str(path)]) == 2

    def test_run_mc_smoke(self, tmp_path, capsys):
        path = write_config(tmp_path, small_raw())
        out_dir = tmp_path / "artifacts"
        assert main(["run", str(path), "--out", str(out_dir)]) == 0
        payload = json.loads((out_dir / "report.json").read_text())
        assert payload["method"] == "mc"
        assert 0.0 <= payload["yield_estimate"] <= 1.0
        counters = payload["counters"]
        assert counters["hf_total"] == counters["hf_offline"] + counters["hf_online"]
        growth = (out_dir / "hf_growth.csv").read_text().splitlines()
        assert growth[0] == "considered_samples,hf_total"
        assert len(growth) == payload["n_samples"] + 2
        assert "yield" in capsys.readouterr().out

    def test_hybrid_and_mc_agree_via_cli(self, tmp_path):
        path = write_config(tmp_path, small_raw())
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", str(path), "--method", "mc", "--out", str(a)]) == 0
        assert main(["run", str(path), "--method", "gpr-hybrid", "--out", str(b)]) == 0
        ya = json.loads((a / "report.json").read_text())["yield_estimate"]
        yb = json.loads((b / "report.json").read_text())["yield_estimate"]
        assert ya == yb

    def test_sigma_y_resolves_sample_count(self, tmp_path):
        raw = small_raw()
        path = write_config(tmp_path, raw)
        out_dir = tmp_path / "sized"
        assert (
            main(
                [
                    "run",
                    str(path),
                    "--sigma-y",
                    "0.01",
                    "--method",
                    "linearized",
                    "--out",
                    str(out_dir),
                ]
            )
            == 0
        )
        payload = json.loads((out_dir / "report.json").read_text())
        assert payload["settings"]["n_samples"] == 2500
        assert payload["config"]["estimator"]["n_samples"] == 2500

    def test_report_echo_reparses(self, tmp_path):
        path = write_config(tmp_path, small_raw())
        out_dir = tmp_path / "echo"
        assert main(["run", str(path), "--out", str(out_dir)]) == 0
        payload = json.loads((out_dir / "report.json").read_text())
        rebuilt = build_run_config(payload["config"])
        assert rebuilt.raw["estimator"] == payload["config"]["estimator"]

    def test_same_seed_gives_byte_identical_artifacts(self, tmp_path):
        path = write_config(tmp_path, small_raw(method="gpr-hybrid"))
        out_dir = tmp_path / "artifacts"
        assert main(["run", str(path), "--out", str(out_dir)]) == 0
        first_csv = (out_dir / "hf_growth.csv").read_bytes()
        first_report = (out_dir / "report.json").read_bytes()
        assert main(["run", str(path), "--out", str(out_dir)]) == 0
        assert (out_dir / "hf_growth.csv").read_bytes() == first_csv
        assert (out_dir / "report.json").read_bytes() == first_report

    def test_sorted_method_via_cli(self, tmp_path):
        raw = small_raw(method="gpr-hybrid-sorted")
        raw["estimator"]["sorting"] = "egl"
        path = write_config(tmp_path, raw)
        out_dir = tmp_path / "sorted"
        assert main(["run", str(path), "--batch-size", "1", "--out", str(out_dir)]) == 0
        payload = json.loads((out_dir / "report.json").read_text())
        assert payload["method"] == "gpr-hybrid-sorted-egl"
        assert payload["settings"]["batch_size"] == 1
        assert sorted(payload["extras"]["considered_order"]) == list(
            range(payload["n_samples"])
        )

    def test_gamma_override_lands_in_echo(self, tmp_path):
        path = write_config(tmp_path, small_raw())
        out_dir = tmp_path / "gamma"
        assert main(["run", str(path), "--gamma", "3.0", "--out", str(out_dir)]) == 0
        payload = json.loads((out_dir / "report.json").read_text())
        assert payload["settings"]["safety_factor"] == 3.0

    @pytest.mark.filterwarnings("ignore:duplicate training inputs")
    def test_sweep_writes_csv(self, tmp_path):
        # The scale-0 sweep leg trains on repeated copies of the mean, which
        # the surrogate flags by design.
        raw = small_raw(n_samples=60, method="sweep")
        raw["sweep"]["upsilons"] = [0.0, 1.0]
        raw["linearization"]["steps"] = [0.5]
        path = write_config(tmp_path, raw)
        out_dir = tmp_path / "sweep"
        assert main(["run", str(path), "--out", str(out_dir)]) == 0
        lines = (out_dir / "sweep.csv").read_text().splitlines()
        assert lines[0] == "upsilon,yield_mc,yield_gpr_hybrid,yield_lin@0.5"
        assert len(lines) == 3

    def test_runtime_failure_exits_1(self, tmp_path):
        raw = small_raw()
        raw["oracle"] = {
            "kind": "blackbox",
            "command": ["/nonexistent/solver-binary"],
        }
        path = write_config(tmp_path, raw)
        assert main(["run", str(path), "--out", str(tmp_path / "x")]) == 1
