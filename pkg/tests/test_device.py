import math

import numpy as np
import pytest

from denram.device import (DelayDistribution, DeviceMode, DeviceState,
                           NoiseModel, apply_read_noise, check_state_bands,
                           fit_lognormal, hrs_center_ohms,
                           measured_delay_distribution, program_reset,
                           program_set, resistance_from_delay, sample_delays,
                           set_level_center_ohms)
from denram.errors import ConfigError, DomainError

WIDE_CLIP = (1e-9, 1e9)  # wide enough that clipping never bites


def test_from_mean_inverts_linear_mean():
    dist = DelayDistribution.from_mean(22e-3, 0.5, *WIDE_CLIP)
    assert dist.mu == pytest.approx(math.log(22e-3) - 0.125)
    assert dist.linear_mean == pytest.approx(22e-3)


def test_distribution_validation():
    with pytest.raises(ConfigError):
        DelayDistribution.from_mean(0.0, 0.5, *WIDE_CLIP)
    with pytest.raises(ConfigError):
        DelayDistribution.from_mean(22e-3, 0.0, *WIDE_CLIP)
    with pytest.raises(ConfigError):
        DelayDistribution.from_mean(22e-3, 0.5, 2e-3, 1e-3)
    with pytest.raises(ConfigError):
        NoiseModel(relative_std=-0.1)


def test_sample_delays_degenerate_sigma():
    dist = DelayDistribution.from_mean(22e-3, 1e-9, *WIDE_CLIP)
    d = sample_delays(dist, 1000, np.random.default_rng(0))
    assert np.all(np.abs(d - 22e-3) < 1e-6)


def test_sample_delays_linear_mean_before_clipping():
    dist = DelayDistribution.from_mean(22e-3, 0.5, *WIDE_CLIP)
    d = sample_delays(dist, 10000, np.random.default_rng(1))
    assert 21e-3 <= d.mean() <= 23e-3


def test_sample_delays_median_matches_exp_mu():
    # lognormal median = exp(mu); for mean 500 ms, sigma 0.5 that is
    # 500/exp(0.125) ms. Monte-Carlo median SE in log space is
    # sigma * 1.2533 / sqrt(n) ~ 0.002, so 1% tolerance is generous.
    dist = DelayDistribution.from_mean(0.5, 0.5, *WIDE_CLIP)
    d = sample_delays(dist, 100000, np.random.default_rng(42))
    expected = 0.5 / math.exp(0.125)
    assert abs(np.median(d) - expected) < 0.01 * expected


def test_sample_delays_respects_clip():
    dist = measured_delay_distribution()
    d = sample_delays(dist, 200000, np.random.default_rng(2))
    assert d.min() >= 8.08e-3
    assert d.max() <= 58.26e-3
    # clipping actually engaged at both ends for this sigma
    assert (d == 8.08e-3).any() and (d == 58.26e-3).any()


def test_sample_delays_deterministic():
    dist = measured_delay_distribution()
    a = sample_delays(dist, 64, np.random.default_rng(9))
    b = sample_delays(dist, 64, np.random.default_rng(9))
    assert np.array_equal(a, b)
    with pytest.raises(DomainError):
        sample_delays(dist, 0, np.random.default_rng(0))


def test_resistance_from_delay():
    assert resistance_from_delay(22e-3, 1e-12) == pytest.approx(2.2e10)
    assert resistance_from_delay(58.26e-3, 0.4e-12) == pytest.approx(1.4565e11)
    with pytest.raises(DomainError):
        resistance_from_delay(0.0, 1e-12)
    with pytest.raises(DomainError):
        resistance_from_delay(1e-3, 0.0)


def test_resistance_round_trip_exact_for_powers_of_two():
    for d, c in [(0.03125, 2.0 ** -40), (0.125, 2.0 ** -38)]:
        assert resistance_from_delay(d, c) * c == d


def test_device_state_validation():
    with pytest.raises(DomainError):
        DeviceState(DeviceMode.LRS, conductance=1e-4)          # missing level
    with pytest.raises(DomainError):
        DeviceState(DeviceMode.HRS, conductance=1e-5, level=3)  # level on HRS
    with pytest.raises(DomainError):
        DeviceState(DeviceMode.PRISTINE, conductance=0.0)
    s = DeviceState(DeviceMode.PRISTINE, conductance=1.0 / 2.2e10)
    assert check_state_bands(s)
    assert not check_state_bands(DeviceState(DeviceMode.PRISTINE,
                                             conductance=1e-3))


def test_program_set_levels():
    rng = np.random.default_rng(3)
    strong = program_set(7, rng)
    weak = program_set(0, rng)
    # level 7 sits in the lowest-resistance sub-band, near 8 kOhm
    assert 8e3 <= strong.resistance <= 8e3 * (50 / 8) ** (1 / 8)
    # level 0 sits in the highest, near 50 kOhm
    assert 50e3 * (8 / 50) ** (1 / 8) <= weak.resistance <= 50e3
    assert check_state_bands(strong) and check_state_bands(weak)
    with pytest.raises(DomainError):
        program_set(8, rng)
    with pytest.raises(DomainError):
        program_set(-1, rng)


def test_program_set_deterministic():
    a = program_set(4, np.random.default_rng(11))
    b = program_set(4, np.random.default_rng(11))
    assert a.resistance == b.resistance
    assert a.level == 4


def test_set_level_median_monotone():
    rng = np.random.default_rng(5)
    medians = []
    for level in range(8):
        rs = [program_set(level, rng).resistance for _ in range(2000)]
        medians.append(np.median(rs))
        assert np.isclose(np.median(rs), set_level_center_ohms(level),
                          rtol=0.05)
    # higher SET level -> lower resistance (stronger weight)
    assert all(b < a for a, b in zip(medians, medians[1:]))


def test_program_reset_band():
    rng = np.random.default_rng(6)
    rs = np.array([program_reset(rng).resistance for _ in range(10000)])
    assert rs.min() >= 60e3 and rs.max() <= 1e6
    # log-uniform fills the band edges at this sample size
    assert rs.min() < 70e3 and rs.max() > 0.9e6
    a = program_reset(np.random.default_rng(12))
    b = program_reset(np.random.default_rng(12))
    assert a.resistance == b.resistance
    assert hrs_center_ohms() == pytest.approx(math.sqrt(60e3 * 1e6))


def test_read_noise_zero_and_all_zero_passthrough():
    w = np.array([[0.5, -1.0], [2.0, 0.0]])
    out = apply_read_noise(w, NoiseModel(relative_std=0.0))
    assert np.array_equal(out, w)
    zeros = np.zeros((3, 3))
    assert np.array_equal(apply_read_noise(zeros, NoiseModel(0.2)), zeros)
    with pytest.raises(DomainError):
        apply_read_noise(np.zeros((0, 2)), NoiseModel(0.1))


def test_read_noise_std_and_bias():
    # layer max |w| = 2.0, relative_std 0.1 -> per-element sigma 0.2
    w = np.zeros(1000000)
    w[0] = 2.0
    w = w.reshape(1000, 1000)
    out = apply_read_noise(w, NoiseModel(relative_std=0.1),
                           np.random.default_rng(8))
    delta = out - w
    assert 0.198 <= delta.std() <= 0.202
    assert abs(delta.mean()) <= 3 * 0.2 / 1000
    assert out.shape == w.shape
    assert w[1, 1] == 0.0  # input untouched


def test_read_noise_default_rng_from_seed():
    w = np.array([[1.0, -0.5]])
    a = apply_read_noise(w, NoiseModel(0.1, seed=21))
    b = apply_read_noise(w, NoiseModel(0.1, seed=21))
    assert np.array_equal(a, b)


def test_fit_lognormal_recovers_parameters():
    rng = np.random.default_rng(10)
    samples = np.exp(rng.normal(math.log(0.01), 0.3, size=1000000))
    mu, sigma = fit_lognormal(samples)
    assert abs(mu - math.log(0.01)) < 1e-2
    assert abs(sigma - 0.3) < 1e-2


def test_fit_lognormal_on_measured_scale_sample():
    # 71 clipped draws from the measured distribution: small-n scatter plus
    # tail clipping keeps the fitted width in a wide but bounded window.
    d = sample_delays(measured_delay_distribution(), 71,
                      np.random.default_rng(13))
    _, sigma = fit_lognormal(d)
    assert 0.35 <= sigma <= 0.65


def test_fit_lognormal_edge_cases():
    mu, sigma = fit_lognormal(np.full(10, 3.0))
    assert sigma == 0.0
    assert mu == pytest.approx(math.log(3.0))
    with pytest.raises(DomainError):
        fit_lognormal([1.0])
    with pytest.raises(DomainError):
        fit_lognormal([1.0, -1.0])
