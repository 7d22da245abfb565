"""
System configuration for the UAV-assisted MEC simulator.

Holds every scalar of the experiment table, the design-decision knobs the
simulator and learner need, and the spatial grid. Configurations are flat
``key = value`` documents (a TOML subset) and are immutable once loaded.
"""

import hashlib
import math
import sys
from typing import Any, Dict, Tuple

import attrs
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .exceptions import ConfigError

Position = Tuple[float, float]

LOSS_VARIANTS = ("square_of_sum", "sum_of_squares")

# Fields that change between runs of one trained model (sweep axis, RNG,
# training schedule) and therefore do not enter the checkpoint hash.
MODEL_HASH_EXCLUDES = frozenset(
    {
        "arrival_prob",
        "seed",
        "training_epochs",
        "epsilon_start",
        "epsilon_end",
        "epsilon_anneal_fraction",
        "eval_epsilon",
        "learning_rate",
        "target_update_period",
        "log_every",
    }
)


def _as_int(value: Any) -> int:
    """Convert to int, refusing silent truncation of fractional values."""
    if isinstance(value, bool):
        raise TypeError(f"expected an integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    return int(value)


def _as_positions(value: Any) -> Tuple[Position, ...]:
    positions = []
    for point in value:
        if len(point) != 2:
            raise ValueError(f"bs position must be an [x, y] pair, got {point!r}")
        positions.append((float(point[0]), float(point[1])))
    return tuple(positions)


def default_bs_positions(num_bs: int, area_side: float) -> Tuple[Position, ...]:
    """Centres of a regular tiling of the area, row-major, first ``num_bs`` tiles."""
    per_side = max(1, math.ceil(math.sqrt(num_bs)))
    tile = area_side / per_side
    centres = [
        ((col + 0.5) * tile, (row + 0.5) * tile)
        for row in range(per_side)
        for col in range(per_side)
    ]
    return tuple(centres[:num_bs])


@attrs.frozen(cache_hash=True)
class SystemConfig:
    """Every parameter of one simulated MEC system (SI units unless noted)."""

    # Topology
    num_bs: int = attrs.field(default=4, converter=_as_int)
    bs_positions: Tuple[Position, ...] = attrs.field(default=(), converter=_as_positions)
    area_side: float = attrs.field(default=400.0, converter=float)
    cell_side: float = attrs.field(default=10.0, converter=float)
    uav_altitude_m: float = attrs.field(default=100.0, converter=float)
    epoch_seconds: float = attrs.field(default=0.01, converter=float)

    # Users and tasks
    num_mus: int = attrs.field(default=12, converter=_as_int)
    arrival_prob: float = attrs.field(default=0.5, converter=float)
    task_bits: float = attrs.field(default=5e5, converter=float)
    cycles_per_bit: float = attrs.field(default=1300.0, converter=float)
    local_cpu_hz: float = attrs.field(default=2e9, converter=float)
    switched_capacitance: float = attrs.field(default=2.5e-28, converter=float)

    # Radio and remote execution
    bandwidth_hz: float = attrs.field(default=1e6, converter=float)
    noise_psd_dbm_hz: float = attrs.field(default=-174.0, converter=float)
    tx_power_w: float = attrs.field(default=3.0, converter=float)
    handover_seconds: float = attrs.field(default=1e-3, converter=float)
    vm_base_rate_bps: float = attrs.field(default=2e7, converter=float)
    vm_degradation: float = attrs.field(default=0.1, converter=float)

    # Utility and learning
    utility_weight: float = attrs.field(default=3.0, converter=float)
    discount: float = attrs.field(default=0.99, converter=float)
    history_len: int = attrs.field(default=50, converter=_as_int)
    replay_capacity: int = attrs.field(default=5000, converter=_as_int)
    minibatch: int = attrs.field(default=200, converter=_as_int)

    # Mobility
    mu_mean_speed: float = attrs.field(default=1.5, converter=float)
    mu_memory: float = attrs.field(default=0.85, converter=float)
    mu_velocity_std: float = attrs.field(default=0.5, converter=float)
    uav_speed: float = attrs.field(default=10.0, converter=float)
    uav_accel_std: float = attrs.field(default=1.0, converter=float)
    uav_turn_mean_dwell: float = attrs.field(default=5.0, converter=float)

    # Channel
    terr_ref_gain: float = attrs.field(default=1e-3, converter=float)
    terr_path_loss_exp: float = attrs.field(default=3.5, converter=float)
    uav_ref_gain: float = attrs.field(default=1e-3, converter=float)

    # Training
    hidden_size: int = attrs.field(default=32, converter=_as_int)
    queue_clip: int = attrs.field(default=20, converter=_as_int)
    learning_rate: float = attrs.field(default=1e-3, converter=float)
    epsilon_start: float = attrs.field(default=1.0, converter=float)
    epsilon_end: float = attrs.field(default=0.05, converter=float)
    epsilon_anneal_fraction: float = attrs.field(default=0.5, converter=float)
    eval_epsilon: float = attrs.field(default=0.01, converter=float)
    target_update_period: int = attrs.field(default=100, converter=_as_int)
    training_epochs: int = attrs.field(default=20000, converter=_as_int)
    loss_variant: str = attrs.field(default="square_of_sum", converter=str)
    log_every: int = attrs.field(default=500, converter=_as_int)

    seed: int = attrs.field(default=2020, converter=_as_int)

    def __attrs_post_init__(self):
        if not self.bs_positions and self.num_bs >= 1:
            object.__setattr__(
                self, "bs_positions", default_bs_positions(self.num_bs, self.area_side)
            )
        for message in _violations(self):
            raise ConfigError(message)


def _violations(cfg: SystemConfig):
    """Yield a message for each violated invariant, in field order."""
    if cfg.num_bs < 1:
        yield "num_bs must be >= 1"
    if len(cfg.bs_positions) != cfg.num_bs:
        yield f"num_bs = {cfg.num_bs} but {len(cfg.bs_positions)} bs_positions given"
    if cfg.area_side <= 0:
        yield "area_side must be > 0"
    if cfg.cell_side <= 0 or cfg.cell_side > cfg.area_side:
        yield "cell_side must be in (0, area_side]"
    else:
        ratio = cfg.area_side / cfg.cell_side
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            yield "area_side is not an integer multiple of cell_side"
    for x, y in cfg.bs_positions:
        if not (0.0 <= x <= cfg.area_side and 0.0 <= y <= cfg.area_side):
            yield f"bs position ({x}, {y}) outside the area"
    if cfg.uav_altitude_m <= 0:
        yield "uav_altitude_m must be > 0"
    if cfg.epoch_seconds <= 0:
        yield "epoch_seconds must be > 0"
    if cfg.num_mus < 1:
        yield "num_mus must be >= 1"
    if not 0.0 <= cfg.arrival_prob <= 1.0:
        yield "arrival_prob out of [0,1]"
    if cfg.task_bits <= 0:
        yield "task_bits must be > 0"
    if cfg.cycles_per_bit < 1:
        yield "cycles_per_bit must be >= 1"
    if cfg.local_cpu_hz <= 0:
        yield "local_cpu_hz must be > 0"
    if cfg.switched_capacitance < 0:
        yield "switched_capacitance must be >= 0"
    if cfg.bandwidth_hz <= 0:
        yield "bandwidth_hz must be > 0"
    if cfg.tx_power_w <= 0:
        yield "tx_power_w must be > 0"
    if cfg.handover_seconds < 0 or cfg.handover_seconds > cfg.epoch_seconds:
        yield "handover_seconds out of [0, epoch_seconds]"
    if cfg.vm_base_rate_bps <= 0:
        yield "vm_base_rate_bps must be > 0"
    if cfg.vm_degradation < 0:
        yield "vm_degradation must be >= 0"
    if cfg.utility_weight < 0:
        yield "utility_weight must be >= 0"
    if not 0.0 <= cfg.discount < 1.0:
        yield "discount out of [0,1)"
    if cfg.history_len < 1:
        yield "history_len must be >= 1"
    if cfg.minibatch < 1:
        yield "minibatch must be >= 1"
    if cfg.minibatch > cfg.replay_capacity:
        yield "minibatch exceeds replay_capacity"
    elif cfg.minibatch > cfg.replay_capacity - cfg.history_len + 1:
        # after the ring wraps, the oldest history_len-1 experiences lack full windows
        yield "minibatch exceeds the replay_capacity - history_len + 1 reconstructible windows"
    if cfg.mu_mean_speed < 0 or cfg.mu_velocity_std < 0:
        yield "MU speed parameters must be >= 0"
    if not 0.0 <= cfg.mu_memory <= 1.0:
        yield "mu_memory out of [0,1]"
    if cfg.uav_speed <= 0:
        yield "uav_speed must be > 0"
    if cfg.uav_accel_std < 0 or cfg.uav_turn_mean_dwell <= 0:
        yield "uav turn parameters must be non-negative with a positive dwell"
    if cfg.terr_ref_gain <= 0 or cfg.terr_path_loss_exp <= 0 or cfg.uav_ref_gain <= 0:
        yield "channel gains and path-loss exponent must be > 0"
    if cfg.hidden_size < 1 or cfg.queue_clip < 1:
        yield "hidden_size and queue_clip must be >= 1"
    if cfg.learning_rate <= 0:
        yield "learning_rate must be > 0"
    for name in ("epsilon_start", "epsilon_end", "eval_epsilon"):
        if not 0.0 <= getattr(cfg, name) <= 1.0:
            yield f"{name} out of [0,1]"
    if not 0.0 < cfg.epsilon_anneal_fraction <= 1.0:
        yield "epsilon_anneal_fraction out of (0,1]"
    if cfg.target_update_period < 1 or cfg.training_epochs < 1 or cfg.log_every < 1:
        yield "target_update_period, training_epochs and log_every must be >= 1"
    if cfg.loss_variant not in LOSS_VARIANTS:
        yield f"loss_variant must be one of {', '.join(LOSS_VARIANTS)}"
    if not 0 <= cfg.seed < 2**63:
        yield "seed out of [0, 2**63)"


FIELD_NAMES = tuple(field.name for field in attrs.fields(SystemConfig))


def load_config(source: str) -> SystemConfig:
    """Parse a ``key = value`` document; omitted keys take their defaults."""
    try:
        data = tomllib.loads(source)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Failed to parse config: {e}") from e

    unknown = sorted(set(data) - set(FIELD_NAMES))
    if unknown:
        raise ConfigError(f"unknown config key '{unknown[0]}'")

    try:
        return SystemConfig(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config value: {e}") from e


def load_config_file(path: str) -> SystemConfig:
    """Load a configuration document from disk."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            content = f.read()
    except OSError as e:
        raise ConfigError(f"Failed to load config '{path}': {e}") from e
    return load_config(content)


def config_to_dict(cfg: SystemConfig) -> Dict[str, Any]:
    data = attrs.asdict(cfg)
    data["bs_positions"] = [list(p) for p in cfg.bs_positions]
    return data


def dumps_config(cfg: SystemConfig) -> str:
    """Serialize every field, in declaration order."""
    return "# uavmec system configuration\n" + tomli_w.dumps(config_to_dict(cfg))


def save_config(cfg: SystemConfig, path: str):
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(dumps_config(cfg))
    except OSError as e:
        raise ConfigError(f"Failed to save config '{path}': {e}") from e


def config_hash(cfg: SystemConfig) -> str:
    """Hash of the model-relevant fields; identifies which system a checkpoint was trained on."""
    data = {k: v for k, v in config_to_dict(cfg).items() if k not in MODEL_HASH_EXCLUDES}
    canonical = tomli_w.dumps(dict(sorted(data.items())))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def compare_configs(cfg1: SystemConfig, cfg2: SystemConfig) -> Dict[str, Dict[str, Any]]:
    """Return the differing fields of two configs."""
    differences = {}
    d1, d2 = config_to_dict(cfg1), config_to_dict(cfg2)
    for name in FIELD_NAMES:
        if d1[name] != d2[name]:
            differences[name] = {"config1": d1[name], "config2": d2[name]}
    return differences


def local_epochs_needed(cfg: SystemConfig) -> int:
    """Epochs the local CPU needs for one task: ceil(mu * theta / (rho * delta))."""
    ratio = (cfg.task_bits * cfg.cycles_per_bit) / (cfg.local_cpu_hz * cfg.epoch_seconds)
    # absorb representation noise in delta so that an exact fit stays one epoch
    return max(1, math.ceil(ratio * (1.0 - 1e-12)))


def cells_per_side(cfg: SystemConfig) -> int:
    return int(round(cfg.area_side / cfg.cell_side))


def num_locations(cfg: SystemConfig) -> int:
    return cells_per_side(cfg) ** 2


def num_actions(cfg: SystemConfig) -> int:
    """Size of the (X, F) action set: {0,1} x {0, 1..B, B+1}."""
    return 2 * (cfg.num_bs + 2)


def noise_w_per_hz(cfg: SystemConfig) -> float:
    return 10.0 ** ((cfg.noise_psd_dbm_hz - 30.0) / 10.0)
