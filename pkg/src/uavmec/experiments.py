"""
Experiment runner: single simulations, parameter sweeps and training runs.

Each (scheme, arrival probability, seed) run draws its randomness from two
streams derived from the configured master seed. The environment stream
does not depend on the scheme, so all schemes face the same arrivals and
mobility for a given arrival probability and seed.
"""

import json
import logging
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Tuple

import attrs
import numpy as np
import pandas as pd
from tqdm import tqdm

from . import __version__
from .config import SystemConfig, dumps_config, load_config_file, save_config
from .drqn import twin_train, write_training_log
from .env import MecEnvironment, TraceWriter
from .exceptions import PlanError
from .mobility import to_location, write_trajectory_csv
from .policies import SCHEMES, make_policy

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger(__name__)

BUILD_ID = f"uavmec {__version__}"


@dataclass
class ExperimentPlan:
    schemes: List[str]
    arrival_probs: List[float]
    seeds: List[int]
    epochs: int
    warmup_epochs: int
    checkpoint: Optional[str] = None
    workers: int = 1
    config: Optional[str] = None

    def __post_init__(self):
        if not self.schemes:
            raise PlanError("plan needs at least one scheme")
        for scheme in self.schemes:
            if scheme not in SCHEMES:
                raise PlanError(f"unknown scheme '{scheme}'")
        if not self.arrival_probs:
            raise PlanError("plan needs at least one arrival probability")
        if any(not 0.0 <= p <= 1.0 for p in self.arrival_probs):
            raise PlanError("arrival_probs out of [0,1]")
        if not self.seeds:
            raise PlanError("plan needs at least one seed")
        if any(seed < 0 for seed in self.seeds):
            raise PlanError("seeds must be >= 0")
        if self.warmup_epochs < 0 or self.epochs <= self.warmup_epochs:
            raise PlanError("epochs must exceed warmup_epochs")
        if "drqn" in self.schemes and not self.checkpoint:
            raise PlanError("scheme 'drqn' requires a checkpoint")
        if self.workers < 1:
            raise PlanError("workers must be >= 1")


PLAN_KEYS = {f.name for f in fields(ExperimentPlan)}


def default_warmup(epochs: int) -> int:
    return epochs // 10


def load_plan(source: str) -> ExperimentPlan:
    """Parse a flat plan document; ``warmup_epochs`` defaults to a tenth of ``epochs``."""
    try:
        data = tomllib.loads(source)
    except tomllib.TOMLDecodeError as e:
        raise PlanError(f"Failed to parse plan: {e}") from e
    unknown = sorted(set(data) - PLAN_KEYS)
    if unknown:
        raise PlanError(f"unknown plan key '{unknown[0]}'")
    try:
        epochs = int(data["epochs"])
        return ExperimentPlan(
            schemes=[str(s) for s in data["schemes"]],
            arrival_probs=[float(p) for p in data["arrival_probs"]],
            seeds=[int(s) for s in data["seeds"]],
            epochs=epochs,
            warmup_epochs=int(data.get("warmup_epochs", default_warmup(epochs))),
            checkpoint=data.get("checkpoint"),
            workers=int(data.get("workers", 1)),
            config=data.get("config"),
        )
    except KeyError as e:
        raise PlanError(f"plan is missing key {e}") from e
    except (TypeError, ValueError) as e:
        raise PlanError(f"invalid plan value: {e}") from e


def load_plan_file(path: str) -> ExperimentPlan:
    try:
        with open(path, "r", encoding="utf-8") as f:
            content = f.read()
    except OSError as e:
        raise PlanError(f"Failed to load plan '{path}': {e}") from e
    return load_plan(content)


@dataclass
class ResultRow:
    scheme: str
    arrival_prob: float
    seed: int
    mean_utility: float
    mean_delay: float
    mean_energy: float
    mean_queue_length: float
    handover_rate: float


RESULT_COLUMNS = [f.name for f in fields(ResultRow)]


def run_streams(
    cfg: SystemConfig, scheme: str, arrival_prob: float, seed: int
) -> Tuple[np.random.Generator, np.random.Generator]:
    """(environment, policy) generators of one run.

    Keys: environment (round(1e6 lambda), seed, 0); policy
    (round(1e6 lambda), seed, 1, crc32(scheme)), both under the master seed.
    """
    key = int(round(arrival_prob * 1e6))
    env_seq = np.random.SeedSequence(cfg.seed, spawn_key=(key, seed, 0))
    policy_seq = np.random.SeedSequence(
        cfg.seed, spawn_key=(key, seed, 1, zlib.crc32(scheme.encode("utf-8")))
    )
    return np.random.default_rng(env_seq), np.random.default_rng(policy_seq)


def simulate(
    cfg: SystemConfig,
    scheme: str,
    seed: int,
    epochs: int,
    warmup_epochs: int,
    checkpoint: Optional[str] = None,
    trace_path: Optional[str] = None,
    trajectory_path: Optional[str] = None,
    progress: bool = False,
) -> ResultRow:
    """Run one scheme and average per user per epoch after the warm-up."""
    env_rng, policy_rng = run_streams(cfg, scheme, cfg.arrival_prob, seed)
    policy = make_policy(scheme, cfg, checkpoint=checkpoint, rng=policy_rng)
    env = MecEnvironment(cfg, rng=env_rng)
    env.reset()
    policy.reset()

    trace = TraceWriter(trace_path) if trace_path else None
    positions: List[tuple] = []
    totals = np.zeros(5)  # utility, delay, energy, queue, handovers
    counted = 0
    for epoch in tqdm(range(epochs), desc=f"{scheme} λ={cfg.arrival_prob}", disable=not progress):
        states = env.local_states
        if trajectory_path:
            positions.extend(_positions(epoch, env, cfg))
        actions = policy.act(states, env.observations, env.links())
        outcomes = env.step(actions)
        if trace is not None:
            trace.record(epoch, states, actions, outcomes)
        if epoch >= warmup_epochs:
            counted += 1
            for s, o in zip(states, outcomes):
                totals += (o.utility, o.total_delay, o.total_energy, s.queue_len, o.handover)
    if trace is not None:
        trace.close()
    if trajectory_path:
        write_trajectory_csv(trajectory_path, positions)

    means = totals / (counted * cfg.num_mus)
    return ResultRow(scheme, cfg.arrival_prob, seed, *(float(m) for m in means))


def _positions(epoch: int, env: MecEnvironment, cfg: SystemConfig) -> List[tuple]:
    state = env.state
    rows = [(epoch, "uav", state.uav.x, state.uav.y, to_location(state.uav.position, cfg))]
    for k, mu in enumerate(state.mus):
        rows.append((epoch, f"mu{k}", mu.x, mu.y, to_location(mu.position, cfg)))
    return rows


def resolve_checkpoint(template: Optional[str], arrival_prob: float) -> Optional[str]:
    if template is None:
        return None
    return template.format(arrival_prob=arrival_prob)


def _run_task(task: Tuple[SystemConfig, str, float, int, int, int, Optional[str]]) -> ResultRow:
    cfg, scheme, arrival_prob, seed, epochs, warmup, checkpoint = task
    run_cfg = attrs.evolve(cfg, arrival_prob=arrival_prob)
    row = simulate(
        run_cfg, scheme, seed, epochs, warmup, resolve_checkpoint(checkpoint, arrival_prob)
    )
    return row


def run_plan(plan: ExperimentPlan, cfg: SystemConfig, progress: bool = False) -> pd.DataFrame:
    """One result row per (scheme, arrival probability, seed), sorted in that order."""
    tasks = [
        (cfg, scheme, p, seed, plan.epochs, plan.warmup_epochs, plan.checkpoint)
        for scheme in plan.schemes
        for p in plan.arrival_probs
        for seed in plan.seeds
    ]
    rows: List[ResultRow] = []
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as executor:
            for row in tqdm(executor.map(_run_task, tasks), total=len(tasks), disable=not progress):
                logger.info("Finished %s λ=%s seed %d", row.scheme, row.arrival_prob, row.seed)
                rows.append(row)
    else:
        for task in tqdm(tasks, desc="sweep", disable=not progress):
            row = _run_task(task)
            logger.info("Finished %s λ=%s seed %d", row.scheme, row.arrival_prob, row.seed)
            rows.append(row)

    frame = pd.DataFrame([asdict(r) for r in rows], columns=RESULT_COLUMNS)
    return frame.sort_values(["scheme", "arrival_prob", "seed"], kind="mergesort").reset_index(
        drop=True
    )


def aggregate(results: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample standard deviation across seeds per (scheme, arrival probability)."""
    metrics = RESULT_COLUMNS[3:]
    grouped = results.groupby(["scheme", "arrival_prob"], sort=True)[metrics]
    means = grouped.mean().add_suffix("_mean")
    stds = grouped.std(ddof=1).add_suffix("_std")
    counts = grouped.size().rename("seeds")
    return pd.concat([means, stds, counts], axis=1).reset_index()


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and value != value:
        return None
    if isinstance(value, (np.floating,)):
        return _json_safe(float(value))
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def write_results(
    out_dir: str,
    results: pd.DataFrame,
    cfg: SystemConfig,
    plan: Optional[ExperimentPlan] = None,
):
    """Write results.csv (with the resolved config as comments), summary.json and config.toml."""
    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.csv")
    with open(results_path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# build = {BUILD_ID}\n")
        for line in dumps_config(cfg).splitlines():
            if line and not line.startswith("#"):
                f.write(f"# {line}\n")
        results.to_csv(f, index=False, lineterminator="\n")

    summary = {
        "build": BUILD_ID,
        "config": json.loads(json.dumps(attrs.asdict(cfg))),
        "plan": None if plan is None else asdict(plan),
        "aggregate": [
            {k: _json_safe(v) for k, v in record.items()}
            for record in aggregate(results).to_dict(orient="records")
        ],
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")

    save_config(cfg, os.path.join(out_dir, "config.toml"))
    logger.info("Wrote results to %s", out_dir)


def read_results(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def sweep_command(plan: ExperimentPlan, cfg: SystemConfig, out_dir: str, progress: bool = False):
    results = run_plan(plan, cfg, progress=progress)
    write_results(out_dir, results, cfg, plan)
    return results


def simulate_command(
    cfg: SystemConfig,
    scheme: str,
    seed: int,
    epochs: int,
    out_dir: str,
    warmup_epochs: Optional[int] = None,
    checkpoint: Optional[str] = None,
    trace: bool = False,
    trajectory: bool = False,
    progress: bool = False,
) -> ResultRow:
    if seed < 0:
        raise PlanError("seed must be >= 0")
    warmup = default_warmup(epochs) if warmup_epochs is None else warmup_epochs
    if warmup < 0 or warmup >= epochs:
        raise PlanError("epochs must exceed warmup_epochs")
    os.makedirs(out_dir, exist_ok=True)
    row = simulate(
        cfg,
        scheme,
        seed,
        epochs,
        warmup,
        checkpoint=resolve_checkpoint(checkpoint, cfg.arrival_prob),
        trace_path=os.path.join(out_dir, "trace.csv") if trace else None,
        trajectory_path=os.path.join(out_dir, "trajectory.csv") if trajectory else None,
        progress=progress,
    )
    write_results(out_dir, pd.DataFrame([asdict(row)], columns=RESULT_COLUMNS), cfg)
    return row


CHECKPOINT_NAME = "drqn.ckpt"


def train_command(
    cfg: SystemConfig, out_dir: str, resume: Optional[str] = None, progress: bool = False
) -> str:
    """Train the shared DRQN; returns the checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    learner, log = twin_train(
        cfg,
        resume=resume,
        progress=progress,
        diagnostic_path=os.path.join(out_dir, "diverged.ckpt"),
    )
    path = os.path.join(out_dir, CHECKPOINT_NAME)
    learner.save(path)
    write_training_log(log, os.path.join(out_dir, "training_log.csv"))
    save_config(cfg, os.path.join(out_dir, "config.toml"))
    return path


def load_run_config(path: Optional[str]) -> SystemConfig:
    return SystemConfig() if path is None else load_config_file(path)


def plan_config(plan: ExperimentPlan, override: Optional[str] = None) -> SystemConfig:
    """Config named on the command line, else the plan's, else the defaults."""
    return load_run_config(override if override is not None else plan.config)


def summary_table(results: pd.DataFrame) -> Dict[str, Any]:
    """Mean utility per scheme and arrival probability, for quick inspection."""
    agg = aggregate(results)
    return {
        scheme: dict(zip(group["arrival_prob"], group["mean_utility_mean"]))
        for scheme, group in agg.groupby("scheme")
    }
