from dataclasses import replace

import numpy as np
import pytest

from denram.analysis import (CLIP_SCALE, DeviceConvention, EnergyTable,
                             EventStats, FootprintReport, SweepResult,
                             SweepRow, aggregate_weight_delay, count_events,
                             count_footprint, estimate_power,
                             sweep_delay_distribution, sweep_hidden_sizes)
from denram.data import LabeledRasterSet, synth_coincidence_dataset
from denram.dendrite import dendritic_current, expand_with_delays
from denram.device import measured_delay_distribution
from denram.errors import DomainError
from denram.learn import (OptimizerKind, OptimizerSpec, TrainConfig,
                          init_denram_model, init_srnn_model)
from denram.network import srnn_forward
from denram.raster import SpikeRaster

DIST = measured_delay_distribution()


def test_footprint_srnn_reference_size():
    model = init_srnn_model(2, 32, 2, 1e-3, seed=0)
    for conv in DeviceConvention:
        rep = count_footprint(model, conv)
        assert rep.trainable_parameters == 1152
        assert rep.rram_devices == 2304
        assert rep.convention is conv


def test_footprint_denram_conventions():
    model = init_denram_model(2, 8, 1, DIST, 1e-3, seed=0)
    four = count_footprint(model, DeviceConvention.FOUR_PER_SYNAPSE)
    assert four.trainable_parameters == 16
    assert four.rram_devices == 64
    two = count_footprint(model, DeviceConvention.TWO_PER_WEIGHT_PLUS_DELAY)
    assert two.rram_devices == 2 * 16 + 16  # shared bank: one delay per circuit
    per_tree = replace(model, shared_bank=False)
    two_pt = count_footprint(per_tree, DeviceConvention.TWO_PER_WEIGHT_PLUS_DELAY)
    assert two_pt.rram_devices == 3 * 16


def test_footprint_full_scale_parameter_count():
    model = init_denram_model(700, 16, 20, DIST, 1e-3, seed=0)
    rep = count_footprint(model, DeviceConvention.TWO_PER_WEIGHT_PLUS_DELAY)
    assert rep.trainable_parameters == 224000
    assert rep.rram_devices == 2 * 224000 + 700 * 16


def test_footprint_validation():
    with pytest.raises(DomainError):
        FootprintReport(10, 5, DeviceConvention.FOUR_PER_SYNAPSE)
    with pytest.raises(DomainError):
        count_footprint(object(), DeviceConvention.FOUR_PER_SYNAPSE)


def test_energy_table_validation_and_flags():
    with pytest.raises(DomainError):
        EnergyTable(f_threshold_block=0.5, f_rc_and_weight=0.1, f_mux=0.1)
    with pytest.raises(DomainError):
        EnergyTable(e_neuron_update=-1e-12)
    flags = EnergyTable().calibration_flags()
    assert flags["e_dendritic_event"] == "measured"
    assert flags["e_neuron_update"] == "assumed"
    assert flags["e_synop"] == "assumed"


def test_power_single_event_reference_point():
    # one dendritic event every 30 ms at 58.5 pJ -> 1.95 nW
    stats = EventStats(dendritic_events=1, sim_time_s=30e-3)
    report = estimate_power(stats, EnergyTable())
    assert report.total_w == pytest.approx(1.95e-9, rel=1e-9)
    dend = sum(report.breakdown[k] for k in
               ("threshold_block", "rc_and_weight", "mux"))
    assert report.breakdown["threshold_block"] == pytest.approx(0.667 * dend)
    assert report.calibration["e_dendritic_event"] == "measured"


def test_power_zero_and_linearity():
    table = EnergyTable()
    assert estimate_power(EventStats(), table).total_w == 0.0
    base = EventStats(dendritic_events=40, neuron_updates=100, synops=30,
                      sim_time_s=1.0)
    doubled = EventStats(dendritic_events=80, neuron_updates=200, synops=60,
                         sim_time_s=1.0)
    assert estimate_power(doubled, table).total_w == pytest.approx(
        2 * estimate_power(base, table).total_w)
    hot = replace(table, e_dendritic_event=2 * table.e_dendritic_event)
    assert estimate_power(base, hot).breakdown["mux"] == pytest.approx(
        2 * estimate_power(base, table).breakdown["mux"])


def test_event_stats_rates():
    stats = EventStats(dendritic_events=6, neuron_updates=9, synops=12,
                       sim_time_s=3.0)
    assert stats.dendritic_rate_hz == pytest.approx(2.0)
    assert stats.neuron_update_rate_hz == pytest.approx(3.0)
    assert stats.synop_rate_hz == pytest.approx(4.0)
    assert EventStats().dendritic_rate_hz == 0.0


def test_count_events_denram_single_spike():
    model = init_denram_model(2, 8, 2, DIST, 1e-3, seed=0)
    data = np.zeros((2, 30), dtype=np.int64)
    data[0, 3] = 1
    ds = LabeledRasterSet([(SpikeRaster(data, 1e-3), 0)], n_classes=1)
    stats = count_events(model, ds)
    assert stats.dendritic_events == 8  # every delay branch sees the spike
    t_run = 30 + model.bank.max_shift
    assert stats.neuron_updates == t_run * 2
    assert stats.sim_time_s == pytest.approx(t_run * 1e-3)


def test_count_events_matches_expanded_recount():
    rng = np.random.default_rng(8)
    model = init_denram_model(3, 5, 2, DIST, 1e-3, seed=1)
    samples = [(SpikeRaster(rng.integers(0, 2, size=(3, 25)), 1e-3), 0)
               for _ in range(4)]
    ds = LabeledRasterSet(samples, n_classes=1)
    stats = count_events(model, ds)
    recount = sum(expand_with_delays(r, model.bank).total_spikes
                  for r, _ in ds.samples)
    assert stats.dendritic_events == recount


def test_count_events_srnn():
    model = init_srnn_model(2, 6, 2, 1e-3, seed=0)
    rng = np.random.default_rng(1)
    raster = SpikeRaster(rng.integers(0, 2, size=(2, 20)), 1e-3)
    ds = LabeledRasterSet([(raster, 0)], n_classes=1)
    stats = count_events(model, ds)
    spikes = int(srnn_forward(model, raster).spikes.sum())
    assert stats.synops == spikes * (6 + 2)
    assert stats.neuron_updates == 20 * (6 + 2)
    assert stats.dendritic_events == 0
    assert stats.sim_time_s == pytest.approx(20e-3)
    with pytest.raises(DomainError):
        count_events(object(), ds)


def test_aggregate_weight_delay_structure():
    model = init_denram_model(3, 1, 2, DIST, 1e-3, seed=2)
    profile = aggregate_weight_delay(model, 0)
    assert profile.shape == (3, model.bank.max_shift + 1)
    for i in range(3):
        nz = np.flatnonzero(profile[i])
        assert nz.tolist() == [model.bank.shifts[i, 0]]
        assert profile[i, nz[0]] == model.weights[i, 0]
    zeros = model.with_weights(np.zeros_like(model.weights))
    assert not np.any(aggregate_weight_delay(zeros, 1))
    with pytest.raises(DomainError):
        aggregate_weight_delay(model, 2)


def test_aggregate_weight_delay_convolution_equivalence():
    rng = np.random.default_rng(5)
    for seed in range(5):
        model = init_denram_model(4, 6, 3, DIST, 1e-3, seed=seed)
        raster = SpikeRaster(rng.integers(0, 3, size=(4, 18)), 1e-3)
        expanded = expand_with_delays(raster, model.bank)
        current = dendritic_current(expanded, model.weights)
        x = raster.data.astype(np.float64)
        for o in range(3):
            profile = aggregate_weight_delay(model, o)
            ref = sum(np.convolve(x[i], profile[i]) for i in range(4))
            assert np.allclose(current[o], ref, atol=1e-12)


def tiny_splits():
    rng = np.random.default_rng(np.random.SeedSequence([1, 77]))
    ds = synth_coincidence_dataset(48, [10e-3, 40e-3], 2e-3, 5e-3, 40, rng)
    return (LabeledRasterSet(ds.samples[:32], 2, "train"),
            LabeledRasterSet(ds.samples[32:40], 2, "val"),
            LabeledRasterSet(ds.samples[40:], 2, "test"))


def tiny_cfg():
    return TrainConfig(learning_rate=0.5, batch_size=16, epochs_pretrain=2,
                       epochs_noise_aware=0, seed=0,
                       optimizer=OptimizerSpec(OptimizerKind.SGD))


def test_sweep_delay_distribution_grid_and_determinism():
    tr, va, te = tiny_splits()
    kwargs = dict(n_delays=4, n_out=2, means_s=[22e-3], sigmas=[0.5],
                  seeds=[0, 1], cfg=tiny_cfg(), n_eval_realizations=2)
    result = sweep_delay_distribution(tr, va, te, **kwargs)
    assert [(r.mean_s, r.sigma, r.seed) for r in result.rows] == \
        [(22e-3, 0.5, 0), (22e-3, 0.5, 1)]
    for row in result.rows:
        assert 0.0 <= row.accuracy <= 1.0
    agg = result.aggregate()
    assert len(agg) == 1
    mean_s, sigma, acc_mean, acc_std = agg[0]
    assert acc_mean == pytest.approx(
        np.mean([r.accuracy for r in result.rows]))
    rerun = sweep_delay_distribution(tr, va, te, **kwargs)
    assert [r.accuracy for r in rerun.rows] == [r.accuracy for r in result.rows]


def test_sweep_csv_round_trip(tmp_path):
    result = SweepResult([SweepRow(22e-3, 0.5, 0, 0.875),
                          SweepRow(44e-3, 0.5, 0, 0.75)])
    path = tmp_path / "sweep.csv"
    result.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "mean_s,sigma,seed,accuracy"
    fields = lines[1].split(",")
    assert float(fields[0]) == 22e-3
    assert fields[2] == "0" and float(fields[3]) == 0.875


def test_sweep_empty_grid_rejected():
    tr, va, te = tiny_splits()
    with pytest.raises(DomainError):
        sweep_delay_distribution(tr, va, te, 4, 2, [], [0.5], [0], tiny_cfg())
    with pytest.raises(DomainError):
        sweep_delay_distribution(tr, va, te, 4, 2, [22e-3], [0.5], [],
                                 tiny_cfg())
    with pytest.raises(DomainError):
        sweep_hidden_sizes(tr, va, te, [], [0], tiny_cfg())


def test_sweep_clip_scale_tracks_mean():
    lo, hi = CLIP_SCALE
    assert lo == pytest.approx(8.08 / 22.0)
    assert hi == pytest.approx(58.26 / 22.0)


def test_sweep_hidden_sizes_rows():
    tr, va, te = tiny_splits()
    rows = sweep_hidden_sizes(tr, va, te, [4], [0], tiny_cfg(),
                              n_eval_realizations=2)
    assert len(rows) == 1
    assert rows[0].n_hidden == 4 and rows[0].seed == 0
    assert 0.0 <= rows[0].accuracy <= 1.0
