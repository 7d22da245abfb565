"""
Tests for the experiment runner and result files
"""

import json
import os

import attrs
import numpy as np
import pandas as pd
import pytest

from uavmec.config import load_config
from uavmec.drqn import TRAINING_LOG_COLUMNS
from uavmec.env import TRACE_COLUMNS
from uavmec.exceptions import CheckpointError, ConfigError, PlanError
from uavmec.experiments import (
    BUILD_ID,
    RESULT_COLUMNS,
    ExperimentPlan,
    aggregate,
    load_plan,
    load_plan_file,
    plan_config,
    read_results,
    resolve_checkpoint,
    run_plan,
    run_streams,
    simulate,
    simulate_command,
    summary_table,
    sweep_command,
    train_command,
)

PLAN = """
schemes = ["local", "greedy"]
arrival_probs = [0.2, 0.6]
seeds = [0, 1]
epochs = 200
"""


def _plan(**overrides):
    values = dict(
        schemes=["local", "cloud"], arrival_probs=[0.3], seeds=[0, 1], epochs=150, warmup_epochs=15
    )
    values.update(overrides)
    return ExperimentPlan(**values)


class TestPlan:
    """Test plan parsing and validation."""

    def test_load(self):
        """Test a plan document with the warm-up defaulting to a tenth."""
        plan = load_plan(PLAN)
        assert plan.schemes == ["local", "greedy"]
        assert plan.arrival_probs == [0.2, 0.6]
        assert plan.warmup_epochs == 20
        assert plan.workers == 1

    def test_unknown_key(self):
        """Test that unknown keys are rejected."""
        with pytest.raises(PlanError, match="unknown plan key"):
            load_plan(PLAN + "repeats = 3\n")

    def test_missing_key(self):
        """Test that required keys are enforced."""
        with pytest.raises(PlanError, match="missing key"):
            load_plan('schemes = ["local"]\narrival_probs = [0.5]\nepochs = 10\n')

    @pytest.mark.parametrize(
        "overrides,message",
        [
            ({"schemes": []}, "at least one scheme"),
            ({"schemes": ["random"]}, "unknown scheme"),
            ({"arrival_probs": [1.5]}, "arrival_probs out of"),
            ({"seeds": []}, "at least one seed"),
            ({"seeds": [0, -1]}, "seeds must be >= 0"),
            ({"epochs": 10, "warmup_epochs": 10}, "epochs must exceed"),
            ({"schemes": ["drqn"]}, "requires a checkpoint"),
            ({"workers": 0}, "workers"),
        ],
    )
    def test_invalid(self, overrides, message):
        """Test each validation rule."""
        with pytest.raises(PlanError, match=message):
            _plan(**overrides)

    def test_plan_error_is_config_error(self):
        """Test plan errors share the configuration exit path."""
        assert issubclass(PlanError, ConfigError)

    def test_missing_file(self, tmp_path):
        """Test IO errors are wrapped."""
        with pytest.raises(PlanError, match="Failed to load plan"):
            load_plan_file(str(tmp_path / "missing.toml"))

    def test_plan_config(self, tmp_path):
        """Test the command-line config wins over the plan's."""
        plan_file = tmp_path / "plan.toml"
        plan_cfg = tmp_path / "plan_cfg.toml"
        cli_cfg = tmp_path / "cli_cfg.toml"
        plan_cfg.write_text("num_mus = 5\n")
        cli_cfg.write_text("num_mus = 7\n")
        plan_file.write_text(PLAN + f'config = "{plan_cfg.as_posix()}"\n')
        plan = load_plan_file(str(plan_file))
        assert plan_config(plan).num_mus == 5
        assert plan_config(plan, str(cli_cfg)).num_mus == 7
        assert plan_config(_plan()).num_mus == 12


class TestStreams:
    """Test per-run random streams."""

    def test_environment_stream_shared_across_schemes(self, small_cfg):
        """Test every scheme sees the same environment draws."""
        env_a, policy_a = run_streams(small_cfg, "local", 0.5, 3)
        env_b, policy_b = run_streams(small_cfg, "drqn", 0.5, 3)
        assert np.array_equal(env_a.random(10), env_b.random(10))
        assert not np.array_equal(policy_a.random(10), policy_b.random(10))

    def test_streams_differ_by_seed_and_lambda(self, small_cfg):
        """Test seed and arrival probability select distinct streams."""
        base = run_streams(small_cfg, "local", 0.5, 0)[0].random(5)
        assert not np.array_equal(base, run_streams(small_cfg, "local", 0.5, 1)[0].random(5))
        assert not np.array_equal(base, run_streams(small_cfg, "local", 0.6, 0)[0].random(5))
        master = attrs.evolve(small_cfg, seed=small_cfg.seed + 1)
        assert not np.array_equal(base, run_streams(master, "local", 0.5, 0)[0].random(5))


class TestSimulate:
    """Test single runs."""

    @pytest.mark.parametrize("scheme", ["local", "cloud", "uav", "greedy"])
    def test_no_arrivals(self, small_cfg, scheme):
        """Test that without tasks every epoch scores 1 + w."""
        cfg = attrs.evolve(small_cfg, arrival_prob=0.0)
        row = simulate(cfg, scheme, 0, 100, 10)
        assert row.mean_utility == 1.0 + cfg.utility_weight
        assert row.mean_delay == 0.0
        assert row.mean_energy == 0.0
        assert row.mean_queue_length == 0.0
        assert row.handover_rate == 0.0

    def test_repeatable(self, small_cfg):
        """Test one seed reproduces the same row."""
        assert simulate(small_cfg, "greedy", 4, 200, 20) == simulate(
            small_cfg, "greedy", 4, 200, 20
        )

    def test_metrics_in_range(self, small_cfg):
        """Test averages stay within their physical ranges."""
        row = simulate(attrs.evolve(small_cfg, arrival_prob=0.8), "greedy", 0, 300, 30)
        assert 0.0 < row.mean_utility <= 1.0 + small_cfg.utility_weight
        assert row.mean_delay > 0.0 and row.mean_energy > 0.0
        assert 0.0 <= row.handover_rate <= 1.0

    def test_missing_checkpoint(self, small_cfg):
        """Test the DRQN scheme needs a checkpoint."""
        with pytest.raises(ConfigError):
            simulate(small_cfg, "drqn", 0, 10, 1)

    def test_resolve_checkpoint(self):
        """Test the checkpoint template expands the arrival probability."""
        assert resolve_checkpoint("runs/{arrival_prob}/drqn.ckpt", 0.3) == "runs/0.3/drqn.ckpt"
        assert resolve_checkpoint("drqn.ckpt", 0.3) == "drqn.ckpt"
        assert resolve_checkpoint(None, 0.3) is None


class TestRunPlan:
    """Test sweeps and aggregation."""

    def test_rows_sorted(self, small_cfg):
        """Test one row per combination in (scheme, arrival, seed) order."""
        results = run_plan(_plan(schemes=["local", "cloud"], arrival_probs=[0.5, 0.1]), small_cfg)
        assert list(results.columns) == RESULT_COLUMNS
        assert len(results) == 8
        keys = list(zip(results["scheme"], results["arrival_prob"], results["seed"]))
        assert keys == sorted(keys)

    def test_workers_match_serial(self, small_cfg):
        """Test process-parallel runs give the same table."""
        serial = run_plan(_plan(), small_cfg)
        parallel = run_plan(_plan(workers=2), small_cfg)
        pd.testing.assert_frame_equal(serial, parallel)

    def test_aggregate(self, small_cfg):
        """Test means and sample standard deviations across seeds."""
        results = run_plan(_plan(seeds=[0, 1, 2]), small_cfg)
        agg = aggregate(results)
        local = results[results["scheme"] == "local"]["mean_utility"].to_numpy()
        row = agg[agg["scheme"] == "local"].iloc[0]
        assert row["mean_utility_mean"] == pytest.approx(local.mean())
        assert row["mean_utility_std"] == pytest.approx(local.std(ddof=1))
        assert row["seeds"] == 3
        assert set(summary_table(results)) == {"local", "cloud"}


class TestResultFiles:
    """Test the written result files."""

    def test_contents(self, small_cfg, tmp_path):
        """Test the results table, embedded config and summary."""
        out = tmp_path / "sweep"
        results = sweep_command(_plan(seeds=[0]), small_cfg, str(out))
        text = (out / "results.csv").read_text()
        assert text.startswith(f"# build = {BUILD_ID}\n")
        comments = [line[2:] for line in text.splitlines()[1:] if line.startswith("# ")]
        assert load_config("\n".join(comments)) == small_cfg
        pd.testing.assert_frame_equal(read_results(str(out / "results.csv")), results)

        summary = json.loads((out / "summary.json").read_text())
        assert summary["build"] == BUILD_ID
        assert summary["plan"]["epochs"] == 150
        assert len(summary["aggregate"]) == 2
        # one seed has no sample deviation
        assert summary["aggregate"][0]["mean_utility_std"] is None
        assert os.path.exists(out / "config.toml")

    def test_byte_identical(self, small_cfg, tmp_path):
        """Test repeating a sweep reproduces every file byte for byte."""
        for name in ("a", "b"):
            sweep_command(_plan(), small_cfg, str(tmp_path / name))
        for filename in ("results.csv", "summary.json", "config.toml"):
            first = (tmp_path / "a" / filename).read_bytes()
            assert first == (tmp_path / "b" / filename).read_bytes()

    def test_simulate_outputs(self, small_cfg, tmp_path):
        """Test trace and trajectory files from a single run."""
        out = tmp_path / "sim"
        row = simulate_command(small_cfg, "uav", 0, 40, str(out), trace=True, trajectory=True)
        trace = pd.read_csv(out / "trace.csv")
        assert list(trace.columns) == TRACE_COLUMNS
        assert len(trace) == 40 * small_cfg.num_mus
        trajectory = pd.read_csv(out / "trajectory.csv")
        assert len(trajectory) == 40 * (small_cfg.num_mus + 1)
        results = read_results(str(out / "results.csv"))
        assert results["mean_utility"].iloc[0] == pytest.approx(row.mean_utility)

    def test_simulate_warmup(self, small_cfg, tmp_path):
        """Test a warm-up as long as the run is refused."""
        with pytest.raises(PlanError):
            simulate_command(small_cfg, "local", 0, 10, str(tmp_path), warmup_epochs=10)


class TestTrainCommand:
    """Test training runs and their use in sweeps."""

    def test_outputs_and_drqn_sweep(self, small_cfg, tmp_path):
        """Test the checkpoint, log and config, then a sweep using the checkpoint."""
        path = train_command(small_cfg, str(tmp_path / "train"))
        assert os.path.basename(path) == "drqn.ckpt"
        log = pd.read_csv(tmp_path / "train" / "training_log.csv")
        assert list(log.columns) == TRAINING_LOG_COLUMNS
        assert os.path.exists(tmp_path / "train" / "config.toml")

        plan = _plan(
            schemes=["drqn", "local"], seeds=[0], checkpoint=path, epochs=60, warmup_epochs=6
        )
        results = run_plan(plan, small_cfg)
        assert set(results["scheme"]) == {"drqn", "local"}

    def test_checkpoint_for_other_system(self, small_cfg, tmp_path):
        """Test a checkpoint trained on another system is refused."""
        path = train_command(small_cfg, str(tmp_path))
        with pytest.raises(CheckpointError):
            simulate(attrs.evolve(small_cfg, num_mus=4), "drqn", 0, 10, 1, checkpoint=path)


@pytest.mark.slow
class TestUtilityTrend:
    """Test how baseline utility responds to load on the default system."""

    def test_baselines_non_increasing_in_load(self, cfg):
        """Test each baseline loses utility as arrivals grow, allowing one noisy step."""
        plan = _plan(
            schemes=["local", "cloud", "uav", "greedy"],
            arrival_probs=[0.1, 0.3, 0.5, 0.7, 0.9],
            seeds=[0, 1],
            epochs=3000,
            warmup_epochs=300,
            workers=2,
        )
        agg = aggregate(run_plan(plan, cfg))
        for scheme, rows in agg.groupby("scheme"):
            rows = rows.sort_values("arrival_prob")
            means = rows["mean_utility_mean"].to_numpy()
            stds = rows["mean_utility_std"].to_numpy()
            rises = np.flatnonzero(np.diff(means) > 0)
            assert len(rises) <= 1, scheme
            for i in rises:
                assert means[i + 1] - means[i] <= max(stds[i], stds[i + 1]), scheme
