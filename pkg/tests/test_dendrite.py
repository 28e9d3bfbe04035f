import math

import numpy as np
import pytest

from denram.dendrite import (AnalogCircuitParams, DelayBank, analog_delay,
                             dendritic_current, dendritic_current_from_events,
                             expand_events, expand_with_delays,
                             simulate_rc_trace)
from denram.device import measured_delay_distribution
from denram.errors import DomainError
from denram.raster import SpikeRaster

LN_RATIO = math.log(0.6 / 0.35)  # recharge factor at the default bias point


def test_analog_delay_closed_form():
    p = AnalogCircuitParams()
    d = analog_delay(40.8e9, p)  # 40.8 GOhm x 1 pF = 40.8 ms RC
    assert d == pytest.approx(40.8e-3 * LN_RATIO)
    assert abs(d - 22e-3) < 0.05e-3
    with pytest.raises(DomainError):
        analog_delay(0.0, p)


def test_analog_delay_vanishes_with_threshold():
    p = AnalogCircuitParams(v_th=1e-9)
    assert analog_delay(1e10, p) < 1e-10


def test_analog_delay_monotone_in_r_and_c():
    p = AnalogCircuitParams()
    assert analog_delay(2e10, p) > analog_delay(1e10, p)
    bigger_c = AnalogCircuitParams(capacitance=2e-12)
    assert analog_delay(1e10, bigger_c) > analog_delay(1e10, p)


def test_circuit_params_validation():
    with pytest.raises(DomainError):
        AnalogCircuitParams(v_th=0.6)      # v_th must stay below v_ref
    with pytest.raises(DomainError):
        AnalogCircuitParams(v_th=0.0)
    with pytest.raises(DomainError):
        AnalogCircuitParams(capacitance=0.0)
    with pytest.raises(DomainError):
        AnalogCircuitParams(pulse_width=0.0)


def test_rc_trace_single_spike():
    # RC = 10 ms: crossing at ln(0.6/0.35) * 10 ms ~ 5.39 ms after pulse end
    p = AnalogCircuitParams()
    _, v, spikes = simulate_rc_trace(1e10, p, [0.0], dt_sim=1e-7, t_end=10e-3)
    assert len(spikes) == 1
    expected = 10e-3 * LN_RATIO + p.pulse_width
    assert abs(spikes[0] - (5.39e-3 + p.pulse_width)) < 0.01e-3
    assert abs(spikes[0] - expected) / expected < 1e-4
    assert v.max() <= 0.6 + 1e-12


def test_rc_trace_no_input():
    p = AnalogCircuitParams()
    _, v, spikes = simulate_rc_trace(1e10, p, [], dt_sim=1e-7, t_end=1e-3)
    assert spikes == []
    assert np.all(v == p.v_ref)


def test_rc_trace_reground_mid_recharge():
    # second pulse at 3 ms interrupts a ~5.39 ms recharge; exactly one
    # output, re-timed from the second pulse end
    p = AnalogCircuitParams()
    _, _, spikes = simulate_rc_trace(1e10, p, [0.0, 3e-3], dt_sim=1e-7,
                                     t_end=12e-3)
    assert len(spikes) == 1
    expected = 3e-3 + p.pulse_width + 10e-3 * LN_RATIO
    assert abs(spikes[0] - expected) / expected < 1e-4
    # refinement oracle: a 10x finer grid moves the crossing < one coarse step
    _, _, fine = simulate_rc_trace(1e10, p, [0.0, 3e-3], dt_sim=1e-8,
                                   t_end=12e-3)
    assert len(fine) == 1
    assert abs(fine[0] - spikes[0]) < 1e-7


def test_rc_trace_two_complete_recharges():
    p = AnalogCircuitParams()
    _, _, spikes = simulate_rc_trace(1e10, p, [0.0, 8e-3], dt_sim=1e-7,
                                     t_end=16e-3)
    assert len(spikes) == 2


def test_rc_trace_overlapping_pulses_merge():
    p = AnalogCircuitParams()
    _, _, spikes = simulate_rc_trace(
        1e10, p, [0.0, 0.5 * p.pulse_width], dt_sim=1e-7, t_end=10e-3)
    assert len(spikes) == 1


def test_rc_trace_preconditions():
    p = AnalogCircuitParams()
    with pytest.raises(DomainError):
        simulate_rc_trace(1e10, p, [0.0], dt_sim=2e-7, t_end=1e-3)  # > pw/10
    with pytest.raises(DomainError):
        simulate_rc_trace(1e7, p, [0.0], dt_sim=1e-4, t_end=1e-3)   # >= RC
    with pytest.raises(DomainError):
        simulate_rc_trace(1e10, p, [2e-3, 1e-3], dt_sim=1e-7, t_end=5e-3)
    with pytest.raises(DomainError):
        simulate_rc_trace(1e10, p, [-1e-3], dt_sim=1e-7, t_end=5e-3)


def test_analog_delay_matches_ode_oracle():
    # scaled pulse widths keep the grid ~4000 steps per decade of delay
    for rc in (2e-3, 50e-3, 1.2):
        delay = rc * LN_RATIO
        pw = delay / 200
        p = AnalogCircuitParams(pulse_width=pw)
        _, _, spikes = simulate_rc_trace(rc / p.capacitance, p, [0.0],
                                         dt_sim=pw / 20, t_end=1.5 * delay + pw)
        assert len(spikes) == 1
        measured = spikes[0] - pw
        assert abs(measured - delay) / delay < 0.005


def test_bank_rounding_ties_to_even():
    bank = DelayBank.from_delays(np.array([[1.5e-3, 2.5e-3, 3.5e-3]]), 1e-3)
    assert bank.shifts.tolist() == [[2, 2, 4]]
    assert bank.max_shift == 4
    assert bank.n_channels == 1 and bank.n_delays == 3


def test_bank_shift_consistency_enforced():
    with pytest.raises(DomainError):
        DelayBank(delays=np.array([[3e-3]]), shifts=np.array([[5]]), dt=1e-3)
    with pytest.raises(DomainError):
        DelayBank.from_delays(np.array([[-2e-3]]), 1e-3)


def test_bank_sample_shape_and_determinism():
    dist = measured_delay_distribution()
    a = DelayBank.sample(dist, 4, 8, 1e-3, np.random.default_rng(3))
    b = DelayBank.sample(dist, 4, 8, 1e-3, np.random.default_rng(3))
    assert a.delays.shape == (4, 8)
    assert np.array_equal(a.delays, b.delays)
    assert np.array_equal(a.shifts, np.rint(a.delays / 1e-3))


def test_expand_channel_count():
    rng = np.random.default_rng(0)
    raster = SpikeRaster(rng.integers(0, 2, size=(256, 10)), dt=5e-3)
    bank = DelayBank.sample(measured_delay_distribution(), 256, 16, 5e-3, rng)
    out = expand_with_delays(raster, bank)
    assert out.n_channels == 4096
    assert out.n_steps == 10 + bank.max_shift


def test_expand_zero_shifts_replicates():
    raster = SpikeRaster(np.array([[1, 0, 2], [0, 1, 0]]), dt=1e-3)
    bank = DelayBank.from_delays(np.zeros((2, 3)), 1e-3)
    out = expand_with_delays(raster, bank)
    assert out.n_steps == 3
    for i in range(2):
        for j in range(3):
            assert np.array_equal(out.data[i * 3 + j], raster.data[i])


def test_expand_single_spike_shift():
    data = np.zeros((1, 10), dtype=np.int64)
    data[0, 5] = 1
    raster = SpikeRaster(data, dt=1e-3)
    bank = DelayBank.from_delays(np.full((1, 4), 3e-3), 1e-3)
    out = expand_with_delays(raster, bank)
    assert out.total_spikes == 4 * raster.total_spikes
    for j in range(4):
        assert out.data[j, 8] == 1
        assert out.data[j].sum() == 1


def test_expand_row_ordering():
    rng = np.random.default_rng(1)
    raster = SpikeRaster(rng.integers(0, 3, size=(3, 12)), dt=1e-3)
    delays = rng.integers(0, 5, size=(3, 2)) * 1e-3
    bank = DelayBank.from_delays(delays, 1e-3)
    out = expand_with_delays(raster, bank)
    for i in range(3):
        for j in range(2):
            s = bank.shifts[i, j]
            row = out.data[i * 2 + j]
            assert np.array_equal(row[s:s + 12], raster.data[i])
            assert row[:s].sum() == 0


def test_expand_dt_mismatch():
    raster = SpikeRaster(np.zeros((2, 4), dtype=np.int64), dt=1e-3)
    with pytest.raises(DomainError):
        expand_with_delays(raster, DelayBank.from_delays(np.zeros((2, 2)), 2e-3))
    with pytest.raises(DomainError):
        expand_with_delays(raster, DelayBank.from_delays(np.zeros((3, 2)), 1e-3))


def test_dendritic_current_coincidence():
    expanded = SpikeRaster(np.array([[0, 1, 0], [0, 1, 0]]), dt=1e-3)
    out = dendritic_current(expanded, np.ones((2, 1)))
    assert out.shape == (1, 3)
    assert out[0].tolist() == [0.0, 2.0, 0.0]
    zero = dendritic_current(expanded, np.zeros((2, 1)))
    assert not zero.any()


def test_dendritic_current_brute_force():
    rng = np.random.default_rng(2)
    expanded = SpikeRaster(rng.integers(0, 3, size=(8, 20)), dt=1e-3)
    weights = rng.normal(size=(8, 4))
    out = dendritic_current(expanded, weights)
    ref = np.zeros((4, 20))
    for o in range(4):
        for c in range(8):
            for t in range(20):
                ref[o, t] += weights[c, o] * expanded.data[c, t]
    assert np.allclose(out, ref, rtol=0, atol=1e-12)
    with pytest.raises(DomainError):
        dendritic_current(expanded, weights[:5])


def test_dendritic_current_linearity():
    rng = np.random.default_rng(4)
    expanded = SpikeRaster(rng.integers(0, 2, size=(6, 15)), dt=1e-3)
    w1 = rng.normal(size=(6, 2))
    w2 = rng.normal(size=(6, 2))
    lhs = dendritic_current(expanded, 2.0 * w1 + w2)
    rhs = 2.0 * dendritic_current(expanded, w1) + dendritic_current(expanded, w2)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_dendritic_current_shift_equivariance():
    rng = np.random.default_rng(5)
    base = rng.integers(0, 2, size=(2, 10))
    pad = np.zeros((2, 3), dtype=np.int64)
    raster = SpikeRaster(np.concatenate([base, pad], axis=1), dt=1e-3)
    shifted = SpikeRaster(np.concatenate([pad, base], axis=1), dt=1e-3)
    bank = DelayBank.from_delays(rng.integers(0, 3, size=(2, 2)) * 1e-3, 1e-3)
    w = rng.normal(size=(4, 2))
    out = dendritic_current(expand_with_delays(raster, bank), w)
    out_shifted = dendritic_current(expand_with_delays(shifted, bank), w)
    assert np.allclose(out[:, :10], out_shifted[:, 3:13], atol=1e-12)


def test_event_path_matches_dense_path():
    rng = np.random.default_rng(6)
    raster = SpikeRaster(rng.integers(0, 2, size=(5, 18)), dt=1e-3)
    bank = DelayBank.from_delays(rng.integers(0, 6, size=(5, 3)) * 1e-3, 1e-3)
    weights = rng.normal(size=(15, 2))
    expanded = expand_with_delays(raster, bank)
    dense = dendritic_current(expanded, weights)
    events, n_ch, n_steps = expand_events(raster, bank)
    assert n_ch == expanded.n_channels
    assert n_steps == expanded.n_steps
    sparse = dendritic_current_from_events(events, n_steps, weights)
    assert np.array_equal(dense, sparse)
