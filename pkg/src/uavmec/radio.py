"""
Average channel power gains and achievable data rates.

Terrestrial links use a power-law path loss from the user's cell centre to
the base station, clamped at one cell side. The air-to-ground link uses a
line-of-sight model at the fixed UAV altitude.
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from .config import SystemConfig, cells_per_side, noise_w_per_hz
from .mobility import cell_center


def terrestrial_gain(distance_m: float, cfg: SystemConfig) -> float:
    d = max(distance_m, cfg.cell_side)
    return cfg.terr_ref_gain * d ** (-cfg.terr_path_loss_exp)


def los_gain(horizontal_m: float, cfg: SystemConfig) -> float:
    h = cfg.uav_altitude_m
    return cfg.uav_ref_gain / (h * h + horizontal_m * horizontal_m)


def gain_bs(mu_loc: int, bs_pos: Sequence[float], cfg: SystemConfig) -> float:
    """Gain between the centre of ``mu_loc`` and a base station."""
    cx, cy = cell_center(mu_loc, cfg)
    return terrestrial_gain(math.hypot(cx - bs_pos[0], cy - bs_pos[1]), cfg)


def _cell_offset(loc_a: int, loc_b: int, cfg: SystemConfig) -> Tuple[int, int]:
    n = cells_per_side(cfg)
    row_a, col_a = divmod(loc_a, n)
    row_b, col_b = divmod(loc_b, n)
    return abs(row_a - row_b), abs(col_a - col_b)


def _offset_distance(d_row: int, d_col: int, cfg: SystemConfig) -> float:
    return math.hypot(d_row * cfg.cell_side, d_col * cfg.cell_side)


def gain_uav(mu_loc: int, uav_loc: int, cfg: SystemConfig) -> float:
    """Line-of-sight gain between two cell centres, the UAV at its altitude."""
    for loc in (mu_loc, uav_loc):
        cell_center(loc, cfg)  # range check
    d_row, d_col = _cell_offset(mu_loc, uav_loc, cfg)
    return los_gain(_offset_distance(d_row, d_col, cfg), cfg)


def rate(gain: float, cfg: SystemConfig, tx_power_w: Optional[float] = None) -> float:
    """Shannon rate in bits/s over the exclusively allocated bandwidth."""
    power = cfg.tx_power_w if tx_power_w is None else tx_power_w
    bandwidth = cfg.bandwidth_hz
    snr = gain * power / (bandwidth * noise_w_per_hz(cfg))
    return bandwidth * math.log2(1.0 + snr)


class RadioMap:
    """Precomputed gains and rates for every location of the grid.

    Tables are filled from the scalar functions above, so lookups are
    bit-identical to direct evaluation.
    """

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        n = cells_per_side(cfg)
        locations = n * n

        self.bs_gains = np.empty((locations, cfg.num_bs))
        self.bs_rates = np.empty((locations, cfg.num_bs))
        for loc in range(locations):
            for b, pos in enumerate(cfg.bs_positions):
                g = gain_bs(loc, pos, cfg)
                self.bs_gains[loc, b] = g
                self.bs_rates[loc, b] = rate(g, cfg)

        # the LOS gain depends only on the absolute cell offset
        self.uav_gains = np.empty((n, n))
        self.uav_rates = np.empty((n, n))
        for d_row in range(n):
            for d_col in range(n):
                g = los_gain(_offset_distance(d_row, d_col, cfg), cfg)
                self.uav_gains[d_row, d_col] = g
                self.uav_rates[d_row, d_col] = rate(g, cfg)

        self._nearest_bs = np.argmin(-self.bs_gains, axis=1)

    def bs_gain(self, mu_loc: int, bs: int) -> float:
        """Gain to base station ``bs`` (1-based)."""
        return float(self.bs_gains[mu_loc, bs - 1])

    def bs_rate(self, mu_loc: int, bs: int) -> float:
        return float(self.bs_rates[mu_loc, bs - 1])

    def uav_gain(self, mu_loc: int, uav_loc: int) -> float:
        d_row, d_col = _cell_offset(mu_loc, uav_loc, self.cfg)
        return float(self.uav_gains[d_row, d_col])

    def uav_rate(self, mu_loc: int, uav_loc: int) -> float:
        d_row, d_col = _cell_offset(mu_loc, uav_loc, self.cfg)
        return float(self.uav_rates[d_row, d_col])

    def nearest_bs(self, mu_loc: int) -> int:
        """1-based index of the base station with the strongest gain (lowest index on ties)."""
        return int(self._nearest_bs[mu_loc]) + 1
