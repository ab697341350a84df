"""Command-line interface: exit codes, artifacts, and replayability.

Every test drives ``main(argv)`` in process with miniature scenarios (a
few steps, single-digit ensembles) so the whole module stays fast.
"""

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import yaml

from diffusim.cli import EXIT_INTERNAL, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, main
from diffusim.experiment import config_to_dict, default_config


def write_config(path, **overrides):
    """A tiny single-sim scenario; overrides patch the default preset."""
    data = config_to_dict(default_config(overrides.pop("system", "l63"),
                                         overrides.pop("dim", None)))
    data.update({
        "steps": 3,
        "sims": 1,
        "base_seed": 5,
        "ensemble_sizes": [8],
        "metric": "rmse",
        "filters": [{"kind": "enkf"}],
    })
    data.update(overrides)
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture(scope="module")
def rmse_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("rmse")
    config = write_config(root / "config.yaml")
    out = root / "out"
    assert main(["run", "--config", config, "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def w2_setup(tmp_path_factory):
    """A stored-ensemble transport-metric run plus a matching reference."""
    root = tmp_path_factory.mktemp("w2")
    config = write_config(root / "config.yaml", metric="w2",
                          reference_n=200, reference_subsample=50,
                          store_ensembles=True)
    out = root / "out"
    ref = root / "ref"
    assert main(["run", "--config", config, "--out", str(out)]) == EXIT_OK
    assert main(["reference", "--config", config, "--out", str(ref)]) == EXIT_OK
    return out, ref, config


class TestParsing:
    def test_no_command_prints_help(self, capsys):
        assert main([]) == EXIT_USAGE
        assert "COMMAND" in capsys.readouterr().out

    def test_help_exits_ok(self, capsys):
        assert main(["--help"]) == EXIT_OK
        assert "usage" in capsys.readouterr().out

    def test_version(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert "diffusim" in capsys.readouterr().out

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == EXIT_USAGE
        assert "diffusim:" in capsys.readouterr().err

    def test_bad_choice(self, capsys):
        assert main(["run", "--system", "l99"]) == EXIT_USAGE

    def test_missing_config_file(self, capsys):
        assert main(["simulate", "--config", "/nonexistent.yaml"]) == EXIT_USAGE
        assert "cannot read config" in capsys.readouterr().err

    def test_config_must_be_mapping(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        path.write_text("- 1\n- 2\n")
        assert main(["simulate", "--config", str(path)]) == EXIT_USAGE
        assert "must be a mapping" in capsys.readouterr().err

    def test_yaml_syntax_error_located(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        path.write_text("steps: [3,\n")
        assert main(["simulate", "--config", str(path)]) == EXIT_USAGE
        assert "line" in capsys.readouterr().err

    def test_json_syntax_error_located(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text('{"steps": }')
        assert main(["simulate", "--config", str(path)]) == EXIT_USAGE
        assert "line 1" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        path = tmp_path / "c.yaml"
        write_config(path)
        data = yaml.safe_load(path.read_text())
        data["turbo"] = True
        path.write_text(yaml.safe_dump(data))
        assert main(["simulate", "--config", str(path)]) == EXIT_USAGE
        err = capsys.readouterr().err
        assert "invalid configuration" in err and "turbo" in err


class TestSimulate:
    def test_writes_scenario_files(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml", sims=2)
        out = tmp_path / "out"
        assert main(["simulate", "--config", config, "--out", str(out)]) == EXIT_OK
        assert (out / "config.json").exists()
        for sim in ("s000", "s001"):
            truth = (out / "sims" / sim / "truth.csv").read_text().splitlines()
            obs = (out / "sims" / sim / "observations.csv").read_text().splitlines()
            assert truth[0] == "k,x_0,x_1,x_2"
            assert len(truth) == 1 + 4  # header + initial state + 3 steps
            assert obs[0] == "k,y_0"
            assert len(obs) == 1 + 3
        assert "sim 1:" in capsys.readouterr().out

    def test_deterministic_bytes(self, tmp_path):
        config = write_config(tmp_path / "c.yaml")
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", config, "--out", str(out_a)]) == EXIT_OK
        assert main(["simulate", "--config", config, "--out", str(out_b)]) == EXIT_OK
        for name in ("config.json", "sims/s000/truth.csv", "sims/s000/observations.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_truth_blowup_is_internal_error(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml",
                              assimilation_interval=5.0, inner_step=0.5)
        with np.errstate(over="ignore", invalid="ignore"):
            code = main(["simulate", "--config", config, "--out", str(tmp_path / "o")])
        assert code == EXIT_INTERNAL
        assert "truth trajectory failed" in capsys.readouterr().err


class TestRun:
    def test_artifacts(self, rmse_run):
        assert (rmse_run / "summary.json").exists()
        assert (rmse_run / "config.json").exists()
        assert (rmse_run / "sims" / "s000" / "truth.csv").exists()
        record_dir = rmse_run / "runs" / "enkf_n8_s0"
        assert (record_dir / "summary.json").exists()
        assert (record_dir / "steps.csv").exists()
        summary = json.loads((rmse_run / "summary.json").read_text())
        cell = summary["cells"][0]
        assert cell["filter"] == "enkf" and cell["n"] == 8
        assert np.isfinite(cell["mean"])

    def test_summary_table_printed(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml")
        out = tmp_path / "out"
        assert main(["run", "--config", config, "--out", str(out)]) == EXIT_OK
        output = capsys.readouterr().out
        assert "mean rmse" in output and "enkf" in output

    def test_rerun_byte_identical(self, tmp_path, rmse_run):
        config = write_config(tmp_path / "c.yaml")
        out = tmp_path / "again"
        assert main(["run", "--config", config, "--out", str(out)]) == EXIT_OK
        for name in ("summary.json", "runs/enkf_n8_s0/steps.csv"):
            assert (out / name).read_bytes() == (rmse_run / name).read_bytes()
        # the record summary may only differ in its wall-clock field
        summaries = []
        for root in (out, rmse_run):
            data = json.loads((root / "runs/enkf_n8_s0/summary.json").read_text())
            data.pop("runtime_seconds")
            summaries.append(data)
        assert summaries[0] == summaries[1]

    def test_filter_flags_override_config(self, tmp_path):
        config = write_config(tmp_path / "c.yaml", filters=[])
        out = tmp_path / "out"
        code = main(["run", "--config", config, "--filter", "enkf",
                     "--n", "6", "--out", str(out)])
        assert code == EXIT_OK
        assert (out / "runs" / "enkf_n6_s0").is_dir()
        assert not (out / "runs" / "diffusion_n6_s0").exists()

    def test_partial_failure_exit_code(self, tmp_path, capsys):
        # A one-step ODE budget makes the diffusion cell fail while the
        # Kalman cell completes; that is the "partial" outcome.
        config = write_config(tmp_path / "c.yaml", filters=[
            {"kind": "diffusion", "sigma_x": 0.1, "sigma_y": 0.25, "max_steps": 1},
            {"kind": "enkf"},
        ])
        out = tmp_path / "out"
        assert main(["run", "--config", config, "--out", str(out)]) == EXIT_PARTIAL
        failures = json.loads((out / "failures.json").read_text())
        assert len(failures["failed_cells"]) == 1
        assert failures["failed_cells"][0]["filter"] == "diffusion"
        assert "cells failed" in capsys.readouterr().err

    def test_high_dim_transport_metric_refused(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml", system="l96", metric="w2",
                              steps=2, reference_n=100, reference_subsample=50)
        code = main(["run", "--config", config, "--out", str(tmp_path / "o")])
        assert code == EXIT_USAGE
        assert "refused for dim 10" in capsys.readouterr().err


class TestReference:
    def test_artifacts_and_determinism(self, w2_setup):
        out, ref, config = w2_setup
        for k in (1, 2, 3):
            assert (ref / "sims" / "s000" / f"ref_k{k:04d}.bin").exists()

    def test_dim_guard(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml", system="l96", steps=2)
        code = main(["reference", "--config", config, "--out", str(tmp_path / "o")])
        assert code == EXIT_USAGE
        assert "refused for dim 10" in capsys.readouterr().err

    def test_n_validation(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml")
        code = main(["reference", "--config", config, "--n", "1",
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_USAGE
        assert ">= 2" in capsys.readouterr().err


class TestMetrics:
    def test_rmse_recompute_matches_exactly(self, rmse_run, capsys):
        assert main(["metrics", str(rmse_run)]) == EXIT_OK
        report = json.loads((rmse_run / "metrics_recomputed.json").read_text())
        assert report["max_abs_difference"] == 0.0
        entry = report["records"]["enkf_n8_s0"]
        assert entry["recomputed"]["rmse"] == entry["stored"]["rmse"]
        assert "max |stored - recomputed|" in capsys.readouterr().out

    def test_w2_requires_reference(self, w2_setup, capsys):
        out, _, _ = w2_setup
        assert main(["metrics", str(out)]) == EXIT_USAGE
        assert "--reference" in capsys.readouterr().err

    def test_w2_recompute_matches_exactly(self, w2_setup, tmp_path):
        out, ref, _ = w2_setup
        dest = tmp_path / "m.json"
        code = main(["metrics", str(out), "--reference", str(ref),
                     "--out", str(dest)])
        assert code == EXIT_OK
        report = json.loads(dest.read_text())
        assert report["max_abs_difference"] == 0.0
        entry = report["records"]["enkf_n8_s0"]
        assert entry["recomputed"]["w2"] == entry["stored"]["w2"]

    def test_incompatible_reference_refused(self, w2_setup, tmp_path, capsys):
        out, _, _ = w2_setup
        other_config = write_config(tmp_path / "c.yaml", metric="w2",
                                    reference_n=200, reference_subsample=50,
                                    base_seed=9)
        other_ref = tmp_path / "ref"
        assert main(["reference", "--config", other_config,
                     "--out", str(other_ref)]) == EXIT_OK
        code = main(["metrics", str(out), "--reference", str(other_ref)])
        assert code == EXIT_USAGE
        err = capsys.readouterr().err
        assert "different scenario" in err and "base_seed" in err

    def test_not_an_output_directory(self, tmp_path, capsys):
        assert main(["metrics", str(tmp_path)]) == EXIT_USAGE
        assert "no config.json" in capsys.readouterr().err

    def test_simulate_output_has_no_runs(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml")
        out = tmp_path / "sim_out"
        assert main(["simulate", "--config", config, "--out", str(out)]) == EXIT_OK
        assert main(["metrics", str(out)]) == EXIT_USAGE
        assert "no runs/" in capsys.readouterr().err


class TestReport:
    def test_single_run(self, rmse_run, capsys):
        assert main(["report", str(rmse_run)]) == EXIT_OK
        output = capsys.readouterr().out
        assert "mean rmse" in output and "enkf" in output

    def test_written_artifacts(self, rmse_run, tmp_path):
        out = tmp_path / "rep"
        assert main(["report", str(rmse_run), "--out", str(out)]) == EXIT_OK
        lines = (out / "report.csv").read_text().splitlines()
        assert lines[0] == "filter,n,sims,failed,mean,median"
        assert len(lines) == 2 and lines[1].startswith("enkf,8,1,0,")
        assert "mean rmse" in (out / "report.txt").read_text()

    def test_incompatible_runs_refused(self, rmse_run, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml", steps=4)
        other = tmp_path / "other"
        assert main(["run", "--config", config, "--out", str(other)]) == EXIT_OK
        assert main(["report", str(rmse_run), str(other)]) == EXIT_USAGE
        err = capsys.readouterr().err
        assert "incompatible configs" in err and "steps" in err

    def test_needs_arguments(self, capsys):
        assert main(["report"]) == EXIT_USAGE
        assert "at least one" in capsys.readouterr().err

    def test_rejects_non_run_directory(self, tmp_path, capsys):
        assert main(["report", str(tmp_path)]) == EXIT_USAGE
        assert "neither a record directory" in capsys.readouterr().err


class TestPlot:
    def test_timeseries_default_output(self, rmse_run):
        record = rmse_run / "runs" / "enkf_n8_s0"
        assert main(["plot", str(record)]) == EXIT_OK
        svg = (record / "timeseries_c0.svg").read_text()
        assert ET.fromstring(svg).tag.endswith("svg")

    def test_timeseries_observed_coordinate(self, rmse_run, tmp_path):
        record = rmse_run / "runs" / "enkf_n8_s0"
        dest = tmp_path / "fig.svg"
        code = main(["plot", str(record), "--coordinate", "2",
                     "--out", str(dest)])
        assert code == EXIT_OK
        # the observed coordinate overlays observation markers
        assert "<circle" in dest.read_text()

    def test_scatter_needs_stored_ensembles(self, rmse_run, capsys):
        record = rmse_run / "runs" / "enkf_n8_s0"
        assert main(["plot", str(record), "--kind", "scatter"]) == EXIT_USAGE
        assert "--store-ensembles" in capsys.readouterr().err

    def test_scatter_from_stored_run(self, w2_setup):
        out, _, _ = w2_setup
        record = out / "runs" / "enkf_n8_s0"
        assert main(["plot", str(record), "--kind", "scatter"]) == EXIT_OK
        path = record / "scatter_k0003_c0c2.svg"
        assert ET.fromstring(path.read_text()).tag.endswith("svg")

    def test_density_from_stored_run(self, w2_setup):
        out, _, _ = w2_setup
        record = out / "runs" / "enkf_n8_s0"
        code = main(["plot", str(record), "--kind", "density", "--bins", "10"])
        assert code == EXIT_OK
        assert (record / "density_c0.svg").exists()

    def test_coordinate_out_of_range(self, rmse_run, capsys):
        record = rmse_run / "runs" / "enkf_n8_s0"
        code = main(["plot", str(record), "--coordinate", "7"])
        assert code == EXIT_USAGE
        assert "outside state dimension" in capsys.readouterr().err

    def test_step_range_validation(self, rmse_run, capsys):
        record = rmse_run / "runs" / "enkf_n8_s0"
        assert main(["plot", str(record), "--step-range", "3:1"]) == EXIT_USAGE
        assert main(["plot", str(record), "--step-range", "a:b"]) == EXIT_USAGE
        assert main(["plot", str(record), "--step-range", "1-3"]) == EXIT_USAGE

    def test_not_a_record_directory(self, tmp_path, capsys):
        assert main(["plot", str(tmp_path)]) == EXIT_USAGE
        assert "not a record directory" in capsys.readouterr().err


class TestGridSearch:
    def test_single_cell(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml", steps=2,
                              sigma_x_grid=[0.1], sigma_y_grid=[0.3])
        out = tmp_path / "grid"
        code = main(["grid-search", "--config", config, "--n", "8",
                     "--out", str(out)])
        assert code == EXIT_OK
        grid = json.loads((out / "grid.json").read_text())
        assert grid["metric"] == "rmse"
        assert grid["best"] == [0.1, 0.3]
        assert len(grid["table"]) == 1
        lines = (out / "grid.csv").read_text().splitlines()
        assert lines[0] == "sigma_x,sigma_y,metric,failed_sims"
        assert len(lines) == 2
        assert "best bandwidths" in capsys.readouterr().out
