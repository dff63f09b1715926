"""MAC estimator tests: entropies, analytic limits, and estimator behavior."""

import math

import numpy as np
import pytest

from spherelab.lsr import ThresholdTable
from spherelab.mac import (
    ConditionalLawEstimate,
    InfoSetSpec,
    MacConfig,
    estimate_conditional_entropy,
    mac_lsr,
    mac_sd,
    theorem1_limits,
)
from spherelab.numerics import Rng


def bpsk_config(grid, outer=50, inner=2000):
    return MacConfig(scenario="flat-mimo", L=4, K=4, modulation_kind="pam",
                     modulation_M=2, snr_grid_db=list(grid), outer=outer, inner=inner)


def zero_table(grid, K=4, kind="pam", M=2, L=4):
    return ThresholdTable(tuple(grid), tuple((0.0,) * K for _ in grid), "exact",
                          kind, M, K, L, "flat-rayleigh", 0, 0)


def inf_table(grid, K=4, kind="pam", M=2, L=4):
    return ThresholdTable(tuple(grid), tuple((math.inf,) * K for _ in grid), "exact",
                          kind, M, K, L, "flat-rayleigh", 0, 0)


class TestEntropy:
    def test_point_mass(self):
        law = ConditionalLawEstimate((np.array([1.0, 0.0]),), 2)
        assert estimate_conditional_entropy(law, 1) == 0.0

    def test_uniform_binary_prefixes(self):
        for k in (1, 2, 3):
            law = ConditionalLawEstimate(
                tuple(np.full(2 ** d, 2.0 ** -d) for d in range(1, k + 1)), 2)
            assert estimate_conditional_entropy(law, k) == pytest.approx(k, abs=1e-12)

    def test_uniform_in_base_m(self):
        # uniform over 2^k binary prefixes measured in base 4: k * log_4 2 = k/2
        law = ConditionalLawEstimate((np.full(4, 0.25),), 4)
        assert estimate_conditional_entropy(law, 1) == pytest.approx(1.0, abs=1e-12)

    def test_matches_direct_summation(self):
        rng = Rng(100)
        p = rng.generator.random(8)
        p /= p.sum()
        law = ConditionalLawEstimate((p,), 2)
        want = -sum(v * math.log2(v) for v in p if v > 0)
        assert estimate_conditional_entropy(law, 1) == pytest.approx(want, abs=1e-12)

    def test_unnormalized_rejected(self):
        law = ConditionalLawEstimate((np.array([0.5, 0.4]),), 2)
        with pytest.raises(ValueError):
            estimate_conditional_entropy(law, 1)


class TestTheorem1Limits:
    @pytest.mark.parametrize("K,want", [(1, (2, 1)), (4, (30, 4)), (8, (510, 8))])
    def test_values(self, K, want):
        assert theorem1_limits(K) == want

    def test_domain(self):
        with pytest.raises(ValueError):
            theorem1_limits(0)


class TestMacSd:
    def test_determinism(self):
        cfg = bpsk_config([0.0], outer=10, inner=500)
        a = mac_sd(InfoSetSpec("radius-li"), cfg, Rng(3))
        b = mac_sd(InfoSetSpec("radius-li"), cfg, Rng(3))
        assert a.mac_values == b.mac_values

    def test_radius_li_brackets(self):
        # quick version of the analytic-limit check (acceptance runs it at scale)
        cfg = bpsk_config([-40.0, 40.0], outer=40, inner=2000)
        curve = mac_sd(InfoSetSpec("radius-li"), cfg, Rng(4))
        low, high = curve.mac_values
        assert low == pytest.approx(30.0, rel=0.10)
        assert high == pytest.approx(4.0, rel=0.05)

    def test_radius_ld_brackets(self):
        cfg = bpsk_config([-40.0, 40.0], outer=40, inner=2000)
        curve = mac_sd(InfoSetSpec("radius-ld"), cfg, Rng(5))
        low, high = curve.mac_values
        assert low == pytest.approx(30.0, rel=0.10)
        assert high == pytest.approx(4.0, rel=0.05)

    def test_values_within_analytic_envelope(self):
        cfg = bpsk_config([-10.0, 0.0, 10.0], outer=20, inner=1000)
        curve = mac_sd(InfoSetSpec("radius-li"), cfg, Rng(6))
        low, high = theorem1_limits(4)
        for v in curve.mac_values:
            assert high - 0.2 <= v <= low + 0.5

    def test_point_conditioning_below_radius_conditioning(self):
        # knowing the detected point can only sharpen the prefix laws
        cfg = bpsk_config([-8.0], outer=30, inner=3000)
        pt = mac_sd(InfoSetSpec("mmse-point"), cfg, Rng(7))
        ld = mac_sd(InfoSetSpec("radius-ld"), cfg, Rng(7))
        li = mac_sd(InfoSetSpec("radius-li"), cfg, Rng(7))
        assert pt.mac_values[0] <= ld.mac_values[0] + 0.5
        assert ld.mac_values[0] <= li.mac_values[0] + 0.5


class TestMacLsr:
    def test_full_reliance_is_zero(self):
        grid = [0.0]
        cfg = bpsk_config(grid, outer=10, inner=500)
        curve = mac_lsr(InfoSetSpec("mmse-point"), cfg, Rng(8), zero_table(grid))
        assert curve.mac_values[0] == 0.0

    def test_no_reliance_matches_point_conditioned_sd(self):
        grid = [-8.0]
        cfg = bpsk_config(grid, outer=25, inner=4000)
        full = mac_sd(InfoSetSpec("zf-point"), cfg, Rng(9))
        never = mac_lsr(InfoSetSpec("zf-point"), cfg, Rng(9), inf_table(grid))
        assert never.mac_values[0] == pytest.approx(full.mac_values[0], rel=1e-12)

    def test_radius_kind_rejected(self):
        cfg = bpsk_config([0.0], outer=2, inner=100)
        with pytest.raises(ValueError):
            mac_lsr(InfoSetSpec("radius-li"), cfg, Rng(10), zero_table([0.0]))

    def test_noise_vanishing_drives_mac_to_zero(self):
        # with thresholds at zero the point is always trusted; at very high SNR
        # that is also the exact answer, so the bound collapses
        grid = [60.0]
        cfg = bpsk_config(grid, outer=10, inner=500)
        curve = mac_lsr(InfoSetSpec("mmse-point"), cfg, Rng(11), zero_table(grid))
        assert curve.mac_values[0] == 0.0


class TestSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            InfoSetSpec("oracle-point")
