import json
import os
from pathlib import Path

import numpy as np
import pytest

from mampc.cli import EXIT_CONFIG, EXIT_OK, evaluate_gates, main
from mampc.config import ConfigError, apply_override, load_config, validate_config
from mampc.scenarios import builtin_scenario

TINY_PENDULUM = """
schema_version = 1

[run]
plant = "pendulum"
variant = "standard"
seed = 0
x0 = [1.5707963267948966, 0.5]
max_steps = 400
tol = 0.01

[mpc]
horizon = 5
q_diag = [1.0, 1.0]
r_diag = [1.0]

[lqr]
roa_radius = 0.5
validate_samples = 30
validate_horizon = 60

[nn]
layer_sizes = [2, 16, 16, 1]
dataset_size = 600
sampling_lower = [-3.141592653589793, -1.0]
sampling_upper = [3.141592653589793, 1.0]
epochs = 60
batch_size = 128
learning_rate = 1e-3

[hybrid]
n_lqr = 5

[bench]
repeats = 3
"""


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny_pendulum.toml"
    path.write_text(TINY_PENDULUM)
    return path


@pytest.fixture(scope="module")
def run_dir(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("artifacts")
    code = main(["run", "--config", str(tiny_config), "--out-dir", str(out)])
    assert code == EXIT_OK
    return out


class TestConfig:
    def test_builtin_scenarios_valid(self):
        for name in ("pendulum", "triple_pendulum", "bicopter", "quadcopter"):
            cfg = builtin_scenario(name)
            assert cfg["run"]["plant"] == name

    def test_shipped_tomls_valid(self):
        root = Path(__file__).resolve().parents[1] / "configs"
        for name in ("pendulum", "triple_pendulum", "bicopter", "quadcopter"):
            cfg = load_config(root / f"{name}.toml")
            assert cfg["run"]["plant"] == name

    def test_unknown_key_rejected(self):
        raw = json.loads(json.dumps(builtin_scenario("pendulum")))
        raw["schema_version"] = 1
        raw["mpc"]["horizont"] = 5
        with pytest.raises(ConfigError, match="horizont"):
            validate_config(raw)

    def test_unknown_section_rejected(self):
        raw = {"schema_version": 1, "runs": {}}
        with pytest.raises(ConfigError, match="runs"):
            validate_config(raw)

    def test_missing_required_key_points_at_it(self):
        raw = json.loads(json.dumps(builtin_scenario("pendulum")))
        raw["schema_version"] = 1
        del raw["run"]["plant"]
        with pytest.raises(ConfigError, match=r"\[run\].plant"):
            validate_config(raw)

    def test_schema_version_checked(self):
        with pytest.raises(ConfigError, match="schema_version"):
            validate_config({"run": {}})
        with pytest.raises(ConfigError, match="unsupported"):
            validate_config({"schema_version": 99})

    def test_type_coercion_and_errors(self):
        raw = json.loads(json.dumps(builtin_scenario("pendulum")))
        raw["schema_version"] = 1
        raw["run"]["tol"] = "loose"
        with pytest.raises(ConfigError, match="tol"):
            validate_config(raw)

    def test_apply_override(self):
        cfg = builtin_scenario("pendulum")
        out = apply_override(cfg, "nn.hidden", "24")
        assert out["nn"]["hidden"] == 24
        assert "hidden" not in cfg["nn"]
        with pytest.raises(ConfigError):
            apply_override(cfg, "nn.bogus", "1")


class TestRunCommand:
    def test_artifacts_written(self, run_dir):
        for name in ("trajectory.csv", "timing.csv", "roa.csv", "training.csv",
                     "manifest.json", "policy.nnpol", "per_step_time.png",
                     "trajectory.png", "training_loss.png",
                     "timing_comparison.png"):
            assert (run_dir / name).exists(), name

    def test_manifest_holds_resolved_parameters(self, run_dir):
        manifest = json.loads((run_dir / "manifest.json").read_text())
        cfg = manifest["config"]
        assert cfg["run"]["plant"] == "pendulum"
        assert cfg["nn"]["epochs"] == 60
        assert cfg["bench"]["repeats"] == 3
        assert "results" in manifest
        assert manifest["results"]["mampc"]["terminated"] == "converged"

    def test_manifest_reruns_bit_exactly(self, run_dir):
        # round-trip: rebuild the scenario from the manifest and compare
        # trajectories bit-for-bit
        from mampc import scenarios
        from mampc.report import read_trajectory_csv

        cfg = load_config(run_dir / "manifest.json")
        bundle = scenarios.build_bundle(cfg)
        rep = scenarios.simulate_mampc(cfg, bundle)
        modes, xs, us, _ns = read_trajectory_csv(run_dir / "trajectory.csv")
        assert modes == rep.modes
        np.testing.assert_array_equal(xs, rep.trajectory[:-1])
        np.testing.assert_array_equal(us, rep.inputs)

    def test_missing_plant_key_exits_1(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text(TINY_PENDULUM.replace('plant = "pendulum"', ""))
        code = main(["run", "--config", str(bad), "--out-dir", str(tmp_path / "o")])
        assert code == EXIT_CONFIG

    def test_nonexistent_config_exits_1(self, tmp_path):
        code = main(["run", "--config", str(tmp_path / "nope.toml"),
                     "--out-dir", str(tmp_path / "o")])
        assert code == EXIT_CONFIG


class TestOtherCommands:
    def test_report_rerenders(self, run_dir):
        (run_dir / "per_step_time.png").unlink()
        code = main(["report", "--out-dir", str(run_dir)])
        assert code == EXIT_OK
        assert (run_dir / "per_step_time.png").exists()

    def test_validate_roa_runs(self, tiny_config, tmp_path):
        code = main(["validate-roa", "--config", str(tiny_config),
                     "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        assert (tmp_path / "roa.csv").exists()

    def test_train_writes_policy(self, tiny_config, tmp_path):
        code = main(["train", "--config", str(tiny_config),
                     "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        assert (tmp_path / "policy.nnpol").exists()
        assert (tmp_path / "training.csv").exists()

    def test_time_reuses_saved_policy(self, tiny_config, run_dir, tmp_path):
        code = main(["time", "--config", str(tiny_config),
                     "--policy", str(run_dir / "policy.nnpol"),
                     "--out-dir", str(tmp_path), "--repeats", "2"])
        assert code == EXIT_OK
        assert (tmp_path / "timing.csv").exists()

    def test_sweep_writes_row_per_value(self, tiny_config, tmp_path):
        os.environ.pop("MAMPC_THREADS", None)
        code = main(["sweep", "--config", str(tiny_config),
                     "--param", "nn.hidden=8,12",
                     "--out-dir", str(tmp_path), "--repeats", "2"])
        assert code == EXIT_OK
        rows = (tmp_path / "sweep.csv").read_text().strip().splitlines()
        assert len(rows) == 3  # header + one per value
        assert "nn.hidden" in rows[1]


class TestGates:
    def test_evaluate_gates_semantics(self):
        results = {
            "mampc": {"terminated": "converged", "steps": 40},
            "implicit": {"terminated": "converged", "steps": 50},
            "training": {"loss_ratio": 0.05},
            "timing": {
                "mampc_total_ns": 1e6,
                "implicit_total_ns": 2e6,
                "median_ns": {"LQR": 1000.0, "NN": 30000.0, "MPC": 900000.0},
            },
        }
        gates = evaluate_gates(results)
        assert all(gates.values())
        results["timing"]["median_ns"]["NN"] = 4000.0  # < 5x LQR
        assert not evaluate_gates(results)["mode_ordering"]
        results["mampc"]["steps"] = 10_000
        assert not evaluate_gates(results)["step_ratio"]
