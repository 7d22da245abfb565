"""
Mobility models for the UAV and the mobile users.

The UAV follows a smooth-turn model with a reflecting boundary: constant
forward speed, a centripetal acceleration that is resampled after
exponentially distributed dwell times. Mobile users follow a boundary
Gauss-Markov model. Both advance once per decision epoch.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import SystemConfig, cells_per_side
from .exceptions import MobilityError

TRAJECTORY_COLUMNS = ["epoch", "entity", "x_m", "y_m", "location_id"]


@dataclass
class UavMobilityState:
    """Terrestrial projection of the UAV and its smooth-turn parameters."""

    x: float
    y: float
    heading: float  # radians
    speed: float  # m/s, constant
    centripetal_accel: float  # m/s^2
    dwell_remaining: float  # seconds until the acceleration is resampled

    @property
    def position(self) -> Tuple[float, float]:
        return (self.x, self.y)


@dataclass
class MuMobilityState:
    """Position, velocity and asymptotic mean velocity of one mobile user."""

    x: float
    y: float
    vx: float
    vy: float
    mean_vx: float
    mean_vy: float

    @property
    def position(self) -> Tuple[float, float]:
        return (self.x, self.y)

    @property
    def velocity(self) -> Tuple[float, float]:
        return (self.vx, self.vy)


def _reflect(value: float, side: float) -> Tuple[float, bool]:
    """Fold a coordinate back into [0, side]; report whether the direction flipped."""
    flipped = False
    while value < 0.0 or value > side:
        if value < 0.0:
            value = -value
        else:
            value = 2.0 * side - value
        flipped = not flipped
    return value, flipped


def step_uav(
    state: UavMobilityState, cfg: SystemConfig, rng: np.random.Generator
) -> UavMobilityState:
    """Advance the UAV by one epoch."""
    delta = cfg.epoch_seconds
    heading = state.heading + (state.centripetal_accel / state.speed) * delta
    distance = state.speed * delta
    x, flip_x = _reflect(state.x + distance * math.cos(heading), cfg.area_side)
    y, flip_y = _reflect(state.y + distance * math.sin(heading), cfg.area_side)

    accel = state.centripetal_accel
    # a mirrored arc turns the other way
    if flip_x:
        heading = math.pi - heading
        accel = -accel
    if flip_y:
        heading = -heading
        accel = -accel
    heading = math.remainder(heading, 2.0 * math.pi)

    dwell = state.dwell_remaining - delta
    if dwell <= 0.0:
        accel = float(rng.normal(0.0, cfg.uav_accel_std))
        dwell = float(rng.exponential(cfg.uav_turn_mean_dwell))

    return UavMobilityState(x, y, heading, state.speed, accel, dwell)


def gauss_markov_velocity(
    velocity: Sequence[float],
    mean_velocity: Sequence[float],
    memory: float,
    noise_std: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One Gauss-Markov update: v' = k v + (1 - k) mean + sqrt(1 - k^2) w."""
    noise = rng.normal(0.0, noise_std, size=2)
    return (
        memory * np.asarray(velocity, dtype=float)
        + (1.0 - memory) * np.asarray(mean_velocity, dtype=float)
        + math.sqrt(1.0 - memory * memory) * noise
    )


def step_mu(state: MuMobilityState, cfg: SystemConfig, rng: np.random.Generator) -> MuMobilityState:
    """Advance one mobile user by one epoch."""
    vx, vy = gauss_markov_velocity(
        state.velocity, (state.mean_vx, state.mean_vy), cfg.mu_memory, cfg.mu_velocity_std, rng
    )
    vx, vy = float(vx), float(vy)
    mean_vx, mean_vy = state.mean_vx, state.mean_vy

    x, flip_x = _reflect(state.x + vx * cfg.epoch_seconds, cfg.area_side)
    y, flip_y = _reflect(state.y + vy * cfg.epoch_seconds, cfg.area_side)
    if flip_x:
        vx, mean_vx = -vx, -mean_vx
    if flip_y:
        vy, mean_vy = -vy, -mean_vy

    return MuMobilityState(x, y, vx, vy, mean_vx, mean_vy)


def initial_uav_state(cfg: SystemConfig, rng: np.random.Generator) -> UavMobilityState:
    x, y = rng.uniform(0.0, cfg.area_side, size=2)
    heading = rng.uniform(-math.pi, math.pi)
    accel = rng.normal(0.0, cfg.uav_accel_std)
    dwell = rng.exponential(cfg.uav_turn_mean_dwell)
    return UavMobilityState(
        float(x), float(y), float(heading), cfg.uav_speed, float(accel), float(dwell)
    )


def initial_mu_state(cfg: SystemConfig, rng: np.random.Generator) -> MuMobilityState:
    """Uniform position; the user starts at its own mean velocity."""
    x, y = rng.uniform(0.0, cfg.area_side, size=2)
    direction = rng.uniform(-math.pi, math.pi)
    mean_vx = cfg.mu_mean_speed * math.cos(direction)
    mean_vy = cfg.mu_mean_speed * math.sin(direction)
    return MuMobilityState(float(x), float(y), mean_vx, mean_vy, mean_vx, mean_vy)


def to_location(position: Sequence[float], cfg: SystemConfig) -> int:
    """Row-major id of the half-open grid cell holding ``position``."""
    x, y = float(position[0]), float(position[1])
    side = cfg.area_side
    if not (0.0 <= x <= side and 0.0 <= y <= side):
        raise MobilityError(f"position ({x}, {y}) outside the {side} m area")

    n = cells_per_side(cfg)
    # the far edge belongs to the last cell
    col = min(int(x // cfg.cell_side), n - 1)
    row = min(int(y // cfg.cell_side), n - 1)
    return row * n + col


def cell_center(location: int, cfg: SystemConfig) -> Tuple[float, float]:
    n = cells_per_side(cfg)
    if not 0 <= location < n * n:
        raise MobilityError(f"location id {location} outside [0, {n * n})")
    row, col = divmod(location, n)
    return ((col + 0.5) * cfg.cell_side, (row + 0.5) * cfg.cell_side)


def trajectory(
    cfg: SystemConfig, epochs: int, rng: np.random.Generator
) -> Iterator[Tuple[int, str, float, float, int]]:
    """Yield ``(epoch, entity, x, y, location)`` records for the UAV and every user."""
    uav = initial_uav_state(cfg, rng)
    mus: List[MuMobilityState] = [initial_mu_state(cfg, rng) for _ in range(cfg.num_mus)]
    for epoch in range(epochs):
        yield (epoch, "uav", uav.x, uav.y, to_location(uav.position, cfg))
        for k, mu in enumerate(mus):
            yield (epoch, f"mu{k}", mu.x, mu.y, to_location(mu.position, cfg))
        uav = step_uav(uav, cfg, rng)
        mus = [step_mu(mu, cfg, rng) for mu in mus]


def write_trajectory_csv(path: str, records: Iterable[Tuple[int, str, float, float, int]]):
    """Write trajectory records as ``epoch,entity,x_m,y_m,location_id``."""
    frame = pd.DataFrame(list(records), columns=TRAJECTORY_COLUMNS)
    frame.to_csv(path, index=False)
