"""Command line harness.

Verbs: train, eval, cd-demo, sweep, report, encode, convert. Every run
that produces files also writes a manifest (config hash, seed, package
and library versions) so outputs can be reproduced exactly; CSV emission
is deterministic given the manifest.

Exit codes: 0 ok, 2 input/config error, 3 runtime/load error.

numpy is imported lazily inside the handlers so --threads (or the
DENRAM_THREADS env var) can pin the BLAS thread pools first. DENRAM_OUT
overrides the output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get("DENRAM_THREADS")
        if env is None:
            return
        try:
            threads = int(env)
        except ValueError:
            raise ValueError(f"DENRAM_THREADS={env!r} is not an integer")
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(threads)


def _out_dir(args, cfg=None) -> str:
    if getattr(args, "out", None):
        return args.out
    env = os.environ.get("DENRAM_OUT")
    if env:
        return env
    return cfg.out_dir if cfg is not None else "runs/run"


def _versions() -> dict:
    import platform

    import numpy
    import scipy

    from . import __version__
    return {"package": __version__, "python": platform.python_version(),
            "numpy": numpy.__version__, "scipy": scipy.__version__}


def _write_manifest(out_dir: str, command: str, seed: int,
                    config_bytes: bytes) -> None:
    manifest = {"command": command,
                "config_sha256": hashlib.sha256(config_bytes).hexdigest(),
                "seed": seed, "versions": _versions()}
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8", newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(args):
    """Returns (config, raw file bytes); raises ConfigError/OSError."""
    from .config import ExperimentConfig
    if not args.config:
        from .errors import ConfigError
        raise ConfigError("--config is required for this command")
    with open(args.config, "rb") as fh:
        raw = fh.read()
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.tree["seed"] = args.seed
    return cfg, raw


def _build_model(cfg, datasets):
    from .learn import init_denram_model, init_srnn_model
    train_set = datasets[0]
    arch = cfg.tree["architecture"]
    tau_mem = arch["tau_mem_ms"] * 1e-3
    tau_out = arch["tau_out_ms"] * 1e-3
    if cfg.model_kind == "denram":
        return init_denram_model(
            train_set.n_channels, arch["n_delays"], cfg.n_out(datasets),
            cfg.delay_distribution(), train_set.dt, seed=cfg.seed,
            tau_mem=tau_mem, tau_out=tau_out,
            v_threshold=arch["v_threshold"], shared_bank=arch["shared_bank"])
    return init_srnn_model(
        train_set.n_channels, arch["n_hidden"], cfg.n_out(datasets),
        train_set.dt, seed=cfg.seed, tau_mem=tau_mem, tau_out=tau_out,
        v_threshold=arch["v_threshold"])


# --- commands -----------------------------------------------------------------

def cmd_train(args) -> int:
    from .errors import ConfigError, DomainError, FormatError
    try:
        cfg, raw = _load_config(args)
        datasets = cfg.load_datasets()
    except (ConfigError, FormatError, OSError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    from .learn import evaluate, train
    from .network import save_checkpoint
    out_dir = _out_dir(args, cfg)
    try:
        model = _build_model(cfg, datasets)
        train_set, val_set, test_set = datasets
        best, history = train(model, train_set, val_set, cfg.train_config())
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(best, os.path.join(out_dir, "checkpoint.ckpt"))
        history.to_csv(os.path.join(out_dir, "history.csv"))
        _write_manifest(out_dir, "train", cfg.seed, raw)
        _write_json(os.path.join(out_dir, "config.json"), cfg.tree)
        results = {"best_val_accuracy": max((r.val_acc for r in history.rows),
                                            default=0.0),
                   "epochs": len(history.rows)}
        if test_set.n_samples:
            clean = evaluate(best, test_set)
            noisy = evaluate(best, test_set, cfg.noise_model(),
                             n_realizations=5, seed=cfg.seed)
            results["test_accuracy_clean"] = clean.mean_accuracy
            results["test_accuracy_noisy"] = noisy.mean_accuracy
            results["noise_relative_std"] = cfg.noise_model().relative_std
        _write_json(os.path.join(out_dir, "results.json"), results)
    except (DomainError, FormatError, OSError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    print(f"run complete: {out_dir}")
    for key, value in sorted(results.items()):
        print(f"  {key}: {value}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_raster_dataset
    from .errors import DomainError, FormatError
    from .learn import evaluate
    from .network import load_checkpoint
    try:
        levels = [float(v) for v in args.noise.split(",") if v != ""]
        if not levels or any(v < 0 for v in levels):
            raise ValueError
    except ValueError:
        return _fail(EXIT_INPUT, f"bad --noise list {args.noise!r}")
    try:
        dataset = load_raster_dataset(args.data, max_steps=args.max_steps)
    except (FormatError, OSError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    try:
        model = load_checkpoint(args.checkpoint)
    except (FormatError, OSError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    from .device import NoiseModel
    rows = []
    try:
        for level in levels:
            noise = NoiseModel(relative_std=level, seed=args.seed or 0)
            res = evaluate(model, dataset, noise,
                           n_realizations=args.realizations,
                           seed=args.seed or 0)
            rows.append({"relative_std": level,
                         "mean_accuracy": res.mean_accuracy,
                         "std_accuracy": res.std_accuracy})
    except DomainError as exc:
        return _fail(EXIT_RUNTIME, f"evaluation failed: {exc}")
    means = [r["mean_accuracy"] for r in rows]
    payload = {"levels": rows,
               "monotone_non_increasing":
                   all(a >= b for a, b in zip(means, means[1:]))}
    if args.out:
        _write_json(args.out, payload)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _parse_float_list(text: str, name: str):
    """Comma list '1,2,3' or range 'start:stop:step' (stop exclusive)."""
    try:
        if ":" in text:
            parts = [float(v) for v in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0:
                raise ValueError
            import numpy as np
            return [float(v) for v in np.arange(parts[0], parts[1], parts[2])]
        values = [float(v) for v in text.split(",") if v != ""]
        if not values:
            raise ValueError
        return values
    except ValueError:
        raise ValueError(f"bad {name} list {text!r}")


def cmd_cd_demo(args) -> int:
    from .errors import DomainError
    from .network import coincidence_experiment, coincidence_weights
    try:
        lags_ms = _parse_float_list(args.lags_ms, "--lags-ms")
        delays_ms = _parse_float_list(args.delays_ms, "--delays-ms")
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))
    if not 0 <= args.selected < len(delays_ms):
        return _fail(EXIT_INPUT,
                     f"--selected {args.selected} out of range for "
                     f"{len(delays_ms)} delays")
    delays_s = [v * 1e-3 for v in delays_ms]
    weights = coincidence_weights(len(delays_s), args.selected)
    lines = ["lag_ms,peak_potential,fired\n"]
    try:
        for lag_ms in lags_ms:
            res = coincidence_experiment(delays_s, weights, lag_ms * 1e-3)
            lines.append(f"{lag_ms!r},{res.peak_potential!r},"
                         f"{int(res.fired)}\n")
    except DomainError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.writelines(lines)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .errors import ConfigError, DomainError, FormatError
    try:
        cfg, raw = _load_config(args)
        datasets = cfg.load_datasets()
    except (ConfigError, FormatError, OSError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    from .analysis import sweep_delay_distribution, sweep_hidden_sizes
    from .device import NoiseModel
    sweep = cfg.tree["sweep"]
    arch = cfg.tree["architecture"]
    out_dir = _out_dir(args, cfg)
    train_set, val_set, test_set = datasets
    eval_noise = NoiseModel(relative_std=sweep["eval_noise"], seed=0)
    try:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "sweep.csv")
        if sweep["kind"] == "delay":
            result = sweep_delay_distribution(
                train_set, val_set, test_set, arch["n_delays"],
                cfg.n_out(datasets), [m * 1e-3 for m in sweep["means_ms"]],
                sweep["sigmas"], sweep["seeds"], cfg.train_config(),
                eval_noise, sweep["eval_realizations"],
                tau_mem=arch["tau_mem_ms"] * 1e-3,
                tau_out=arch["tau_out_ms"] * 1e-3)
            result.to_csv(path)
            n_rows = len(result.rows)
        else:
            rows = sweep_hidden_sizes(
                train_set, val_set, test_set, sweep["sizes"], sweep["seeds"],
                cfg.train_config(), eval_noise, sweep["eval_realizations"],
                tau_mem=arch["tau_mem_ms"] * 1e-3,
                tau_out=arch["tau_out_ms"] * 1e-3)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write("n_hidden,seed,accuracy\n")
                for r in rows:
                    fh.write(f"{r.n_hidden},{r.seed},{r.accuracy!r}\n")
            n_rows = len(rows)
        _write_manifest(out_dir, "sweep", cfg.seed, raw)
    except (DomainError, FormatError, OSError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    print(f"wrote {path} ({n_rows} rows)")
    return EXIT_OK


def cmd_report(args) -> int:
    from .analysis import (DeviceConvention, count_events, count_footprint,
                           estimate_power)
    from .data import load_raster_dataset
    from .errors import DomainError, FormatError
    from .network import DenramModel, load_checkpoint
    ckpt = os.path.join(args.run, "checkpoint.ckpt")
    if not os.path.isfile(ckpt):
        return _fail(EXIT_INPUT, f"no checkpoint found in run dir {args.run!r}")
    try:
        model = load_checkpoint(ckpt)
    except (FormatError, OSError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    two = count_footprint(model, DeviceConvention.TWO_PER_WEIGHT_PLUS_DELAY)
    four = count_footprint(model, DeviceConvention.FOUR_PER_SYNAPSE)
    payload = {
        "model": "denram" if isinstance(model, DenramModel) else "srnn",
        "footprint": {
            "trainable_parameters": two.trainable_parameters,
            "devices": {
                DeviceConvention.TWO_PER_WEIGHT_PLUS_DELAY.value: two.rram_devices,
                DeviceConvention.FOUR_PER_SYNAPSE.value: four.rram_devices,
            },
        },
    }
    if args.data:
        try:
            dataset = load_raster_dataset(args.data)
        except (FormatError, OSError) as exc:
            return _fail(EXIT_INPUT, str(exc))
        try:
            stats = count_events(model, dataset)
        except DomainError as exc:
            return _fail(EXIT_RUNTIME, str(exc))
        power = estimate_power(stats, _energy_table_for_run(args.run))
        payload["power"] = {
            "total_w": power.total_w,
            "breakdown": power.breakdown,
            "calibration": power.calibration,
            "event_rates_hz": {
                "dendritic": stats.dendritic_rate_hz,
                "neuron_updates": stats.neuron_update_rate_hz,
                "synops": stats.synop_rate_hz,
            },
        }
    out = args.out or os.path.join(args.run, "report.json")
    _write_json(out, payload)
    print(f"wrote {out}")
    return EXIT_OK


def _energy_table_for_run(run_dir: str):
    """EnergyTable from the run's saved config when present, else defaults."""
    from .analysis import EnergyTable
    path = os.path.join(run_dir, "config.json")
    if os.path.isfile(path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                tree = json.load(fh)
            e = tree["energy"]
            return EnergyTable(
                e_dendritic_event=e["e_dendritic_event_pj"] * 1e-12,
                f_threshold_block=e["f_threshold_block"],
                f_rc_and_weight=e["f_rc_and_weight"], f_mux=e["f_mux"],
                e_neuron_update=e["e_neuron_update_pj"] * 1e-12,
                e_synop=e["e_synop_pj"] * 1e-12)
        except (KeyError, TypeError, ValueError, OSError):
            pass
    return EnergyTable()


def cmd_encode(args) -> int:
    from .data import (DeltaModParams, LabeledRasterSet, delta_modulate,
                       save_raster_dataset)
    from .errors import DomainError, FormatError
    values = []
    try:
        with open(args.signal, "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split(",")
                try:
                    values.append(float(parts[-1]))
                except ValueError:
                    if ln == 1:
                        continue
                    return _fail(EXIT_INPUT,
                                 f"{args.signal}:{ln}: bad sample value")
    except OSError as exc:
        return _fail(EXIT_INPUT, str(exc))
    if not values:
        return _fail(EXIT_INPUT, f"{args.signal}: no samples")
    initial = values[0] if args.initial is None else args.initial
    try:
        if args.delta is not None:
            delta = args.delta
        else:
            import numpy as np
            q1, q3 = np.percentile(values, [25, 75])
            delta = 0.1 * float(q3 - q1)
        p = DeltaModParams(delta=delta, initial=initial)
        raster = delta_modulate(values, p, dt=args.dt)
        dataset = LabeledRasterSet([(raster, 0)], n_classes=1)
        save_raster_dataset(dataset, args.out, binary=args.binary)
    except (DomainError, FormatError, OSError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    print(f"wrote {args.out} ({raster.total_spikes} spikes, delta={delta!r})")
    return EXIT_OK


def cmd_convert(args) -> int:
    from .data import LabeledRasterSet, save_raster_dataset
    from .errors import DomainError, FormatError
    from .raster import rasterize_events
    events: dict = {}
    labels: dict = {}
    try:
        with open(args.events, "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = [p.strip() for p in line.split(",")]
                if len(parts) != 4:
                    return _fail(EXIT_INPUT, f"{args.events}:{ln}: expected "
                                 "sample_id,label,channel,time_s")
                try:
                    sid, label = int(parts[0]), int(parts[1])
                    ch, t = int(parts[2]), float(parts[3])
                except ValueError:
                    if ln == 1:
                        continue
                    return _fail(EXIT_INPUT,
                                 f"{args.events}:{ln}: bad event fields")
                events.setdefault(sid, ([], []))
                events[sid][0].append(ch)
                events[sid][1].append(t)
                labels[sid] = label
    except OSError as exc:
        return _fail(EXIT_INPUT, str(exc))
    if not events:
        return _fail(EXIT_INPUT, f"{args.events}: no events")
    all_ch = [c for chs, _ in events.values() for c in chs]
    all_t = [t for _, ts in events.values() for t in ts]
    n_channels = args.n_channels or max(all_ch) + 1
    n_steps = args.n_steps or int(max(all_t) / args.dt) + 1
    n_classes = args.n_classes or max(labels.values()) + 1
    try:
        samples = []
        for sid in sorted(events):
            chs, ts = events[sid]
            raster = rasterize_events(chs, ts, args.dt, n_channels, n_steps)
            samples.append((raster, labels[sid]))
        dataset = LabeledRasterSet(samples, n_classes=n_classes)
        save_raster_dataset(dataset, args.out, binary=args.binary)
    except (DomainError, FormatError, OSError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    print(f"wrote {args.out} ({len(samples)} samples, {n_channels} channels, "
          f"{n_steps} bins)")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="denram",
        description="Dendritic delay network simulator and trainer")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS/OpenMP thread count (default: all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config (YAML)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", help="output directory override")

    p = sub.add_parser("train", help="train a model from a config")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under read noise")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="ERAS dataset path")
    p.add_argument("--noise", default="0",
                   help="comma list of relative noise levels")
    p.add_argument("--realizations", type=int, default=10)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write metrics JSON here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cd-demo",
                       help="coincidence-detection tuning curve CSV")
    p.add_argument("--lags-ms", default="0:121:2",
                   help="comma list or start:stop:step range")
    p.add_argument("--delays-ms", default="18,36,48,58")
    p.add_argument("--selected", type=int, default=3,
                   help="index of the low-resistance (strong) delay circuit")
    p.add_argument("--out", default="cd_demo.csv")
    p.set_defaults(func=cmd_cd_demo)

    p = sub.add_parser("sweep", help="delay-distribution or hidden-size sweep")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="footprint/power JSON for a run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--data", help="ERAS dataset for event-rate measurement")
    p.add_argument("--out", help="report path (default <run>/report.json)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("encode", help="delta-modulate a CSV signal to ERAS")
    p.add_argument("--signal", required=True, help="CSV of samples")
    p.add_argument("--delta", type=float, default=None,
                   help="step threshold (default 0.1 x IQR)")
    p.add_argument("--initial", type=float, default=None,
                   help="tracker start (default: first sample)")
    p.add_argument("--dt", type=float, default=1.0 / 360.0)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("convert", help="event CSV to an ERAS dataset")
    p.add_argument("--events", required=True,
                   help="CSV of sample_id,label,channel,time_s")
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--n-channels", type=int, default=None)
    p.add_argument("--n-steps", type=int, default=None)
    p.add_argument("--n-classes", type=int, default=None)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _apply_threads(args.threads)
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
