"""
Tests for channel gains and data rates
"""

import math

import attrs
import numpy as np
import pytest

from uavmec.config import SystemConfig, noise_w_per_hz
from uavmec.exceptions import MobilityError
from uavmec.mobility import to_location
from uavmec.radio import RadioMap, gain_bs, gain_uav, los_gain, rate, terrestrial_gain


class TestTerrestrialGain:
    """Test the power-law terrestrial channel."""

    def test_reference_distance(self):
        """Test the reference gain at 1 m."""
        cfg = SystemConfig(terr_ref_gain=1e-3, terr_path_loss_exp=3.0, cell_side=1.0)
        assert terrestrial_gain(1.0, cfg) == pytest.approx(1e-3)

    def test_doubling_distance(self):
        """Test that doubling the distance divides the gain by 2 ** exponent."""
        cfg = SystemConfig(terr_path_loss_exp=3.0)
        assert terrestrial_gain(40.0, cfg) == pytest.approx(terrestrial_gain(20.0, cfg) / 8)

    def test_clamp_at_cell_side(self, cfg):
        """Test that a user in the BS cell gets a finite gain evaluated at one cell side."""
        loc = to_location(cfg.bs_positions[0], cfg)
        g = gain_bs(loc, cfg.bs_positions[0], cfg)
        assert math.isfinite(g)
        assert g == terrestrial_gain(cfg.cell_side, cfg)


class TestUavGain:
    """Test the line-of-sight channel."""

    def test_directly_under(self, cfg):
        """Test the overhead gain beta0 / H^2."""
        assert gain_uav(0, 0, cfg) == pytest.approx(1e-7)

    def test_horizontal_equal_altitude(self, cfg):
        """Test that d_h = H halves the overhead gain."""
        assert los_gain(cfg.uav_altitude_m, cfg) == pytest.approx(los_gain(0.0, cfg) / 2)

    def test_monotone_in_distance(self, cfg):
        """Test that the gain decreases with horizontal distance."""
        gains = [gain_uav(0, col, cfg) for col in range(40)]
        assert all(a > b for a, b in zip(gains, gains[1:]))

    def test_decreases_with_altitude(self, cfg):
        """Test that raising the UAV lowers the gain."""
        high = attrs.evolve(cfg, uav_altitude_m=200.0)
        assert gain_uav(0, 5, high) < gain_uav(0, 5, cfg)

    def test_symmetric(self, cfg):
        """Test that the gain depends only on the offset."""
        assert gain_uav(41, 123, cfg) == gain_uav(123, 41, cfg)

    def test_invalid_location(self, cfg):
        """Test that out-of-grid locations raise."""
        with pytest.raises(MobilityError):
            gain_uav(0, 1600, cfg)


class TestRate:
    """Test the Shannon rate."""

    def _gain_for_snr(self, snr, cfg):
        return snr * cfg.bandwidth_hz * noise_w_per_hz(cfg) / cfg.tx_power_w

    def test_unit_snr(self, cfg):
        """Test that SNR 1 gives R = W."""
        assert rate(self._gain_for_snr(1.0, cfg), cfg) == pytest.approx(cfg.bandwidth_hz)

    def test_snr_three(self, cfg):
        """Test that SNR 3 gives R = 2W."""
        assert rate(self._gain_for_snr(3.0, cfg), cfg) == pytest.approx(2 * cfg.bandwidth_hz)

    def test_snr_1023(self, cfg):
        """Test that SNR 1023 at 1 MHz gives 10 Mbit/s."""
        assert rate(self._gain_for_snr(1023.0, cfg), cfg) == pytest.approx(1e7)

    def test_monotone(self, cfg):
        """Test that the rate increases with gain and power."""
        assert rate(2e-12, cfg) > rate(1e-12, cfg)
        assert rate(1e-12, cfg, tx_power_w=6.0) > rate(1e-12, cfg)

    def test_vanishing_gain(self, cfg):
        """Test that the rate tends to zero with the gain."""
        assert rate(1e-300, cfg) < 1e-6


class TestRadioMap:
    """Test the precomputed tables."""

    def test_matches_scalar_functions(self, small_cfg):
        """Test that table lookups are bit-identical to direct evaluation."""
        radio = RadioMap(small_cfg)
        for mu_loc in (0, 7, 55, 99):
            for b, pos in enumerate(small_cfg.bs_positions, start=1):
                assert radio.bs_gain(mu_loc, b) == gain_bs(mu_loc, pos, small_cfg)
                assert radio.bs_rate(mu_loc, b) == rate(gain_bs(mu_loc, pos, small_cfg), small_cfg)
            for uav_loc in (0, 33, 99):
                g = gain_uav(mu_loc, uav_loc, small_cfg)
                assert radio.uav_gain(mu_loc, uav_loc) == g
                assert radio.uav_rate(mu_loc, uav_loc) == rate(g, small_cfg)

    def test_all_positive_and_finite(self, small_cfg):
        """Test that every table entry is finite and positive."""
        radio = RadioMap(small_cfg)
        for table in (radio.bs_gains, radio.bs_rates, radio.uav_gains, radio.uav_rates):
            assert np.all(np.isfinite(table)) and np.all(table > 0)

    def test_nearest_bs(self, cfg):
        """Test that a user in a quadrant prefers that quadrant's BS."""
        radio = RadioMap(cfg)
        assert radio.nearest_bs(to_location((390.0, 10.0), cfg)) == 2
        assert radio.nearest_bs(to_location((10.0, 390.0), cfg)) == 3
