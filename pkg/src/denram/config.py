"""Experiment configuration: one YAML tree per run, validated totally.

Every key is checked against the schema below before anything executes;
unknown keys and bad values fail with the full key path so a typo in a
nested section never surfaces as a mid-run crash. Human-facing units are
encoded in the key names (ms, pJ, pF, us) and converted to SI here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from .analysis import EnergyTable
from .data import (DeltaModParams, LabeledRasterSet, load_ecg_segments,
                   load_raster_dataset, split_train_val, subsample_channels,
                   synth_coincidence_dataset)
from .dendrite import AnalogCircuitParams
from .device import DelayDistribution, NoiseModel
from .errors import ConfigError
from .learn import (OptimizerKind, OptimizerSpec, Surrogate, SurrogateKind,
                    TrainConfig)

_REQUIRED = object()


class _Field:
    def __init__(self, typ, default=_REQUIRED, choices=None, minimum=None,
                 exclusive_minimum=None, maximum=None, nullable=False,
                 element=None):
        self.typ = typ
        self.default = default
        self.choices = choices
        self.minimum = minimum
        self.exclusive_minimum = exclusive_minimum
        self.maximum = maximum
        self.nullable = nullable
        self.element = element     # element type for lists


def _check_scalar(path: str, value, f: _Field):
    if value is None:
        if f.nullable:
            return None
        raise ConfigError(f"{path}: must not be null")
    if f.typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        value = float(value)
    elif f.typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif f.typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif f.typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    if f.choices is not None and value not in f.choices:
        raise ConfigError(f"{path}: must be one of {sorted(f.choices)}, "
                          f"got {value!r}")
    if f.minimum is not None and value < f.minimum:
        raise ConfigError(f"{path}: must be >= {f.minimum}, got {value!r}")
    if f.exclusive_minimum is not None and value <= f.exclusive_minimum:
        raise ConfigError(f"{path}: must be > {f.exclusive_minimum}, got {value!r}")
    if f.maximum is not None and value > f.maximum:
        raise ConfigError(f"{path}: must be <= {f.maximum}, got {value!r}")
    return value


def _validate(schema: dict, tree, path: str) -> dict:
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    out = {}
    for key in tree:
        if key not in schema:
            raise ConfigError(f"{_join(path, key)}: unknown key")
    for key, spec in schema.items():
        sub = _join(path, key)
        if isinstance(spec, dict):
            out[key] = _validate(spec, tree.get(key), sub)
            continue
        if key not in tree:
            if spec.default is _REQUIRED:
                raise ConfigError(f"{sub}: missing required key")
            out[key] = spec.default
            continue
        value = tree[key]
        if spec.typ is list:
            if not isinstance(value, list) or not value:
                raise ConfigError(f"{sub}: expected a non-empty list")
            out[key] = [_check_scalar(f"{sub}[{i}]", v, spec.element)
                        for i, v in enumerate(value)]
        else:
            out[key] = _check_scalar(sub, value, spec)
    return out


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


_POS_F = dict(exclusive_minimum=0.0)

_SCHEMA_OPTIMIZER = {
    "kind": _Field(str, "adam", choices=("sgd", "adam")),
    "beta1": _Field(float, 0.9, minimum=0.0, maximum=1.0),
    "beta2": _Field(float, 0.999, minimum=0.0, maximum=1.0),
    "eps": _Field(float, 1e-8, **_POS_F),
}
_SCHEMA_SURROGATE = {
    "kind": _Field(str, "fast_sigmoid", choices=("fast_sigmoid", "boxcar")),
    "slope": _Field(float, 10.0, **_POS_F),
    "width": _Field(float, 1.0, **_POS_F),
}
_SCHEMA_TRAIN = {
    "learning_rate": _Field(float, 1e-3, **_POS_F),
    "batch_size": _Field(int, 64, minimum=1),
    "epochs_pretrain": _Field(int, 20, minimum=0),
    "epochs_noise_aware": _Field(int, 20, minimum=0),
    "optimizer": _SCHEMA_OPTIMIZER,
    "surrogate": _SCHEMA_SURROGATE,
}
_SCHEMA_ARCH = {
    "n_delays": _Field(int, 8, minimum=1),
    "n_hidden": _Field(int, 32, minimum=1),
    "n_out": _Field(int, None, minimum=1, nullable=True),
    "tau_mem_ms": _Field(float, 20.0, **_POS_F),
    "tau_out_ms": _Field(float, 20.0, **_POS_F),
    "v_threshold": _Field(float, 1.0, **_POS_F),
    "shared_bank": _Field(bool, True),
}
_SCHEMA_DELAY = {
    "mean_ms": _Field(float, 22.0, **_POS_F),
    "sigma": _Field(float, 0.5, **_POS_F),
    "clip_min_ms": _Field(float, 8.08, **_POS_F),
    "clip_max_ms": _Field(float, 58.26, **_POS_F),
}
_SCHEMA_NOISE = {
    "relative_std": _Field(float, 0.1, minimum=0.0),
    "seed": _Field(int, None, nullable=True),
}
_SCHEMA_CIRCUIT = {
    "v_ref": _Field(float, 0.6, **_POS_F),
    "v_th": _Field(float, 0.25, **_POS_F),
    "capacitance_pf": _Field(float, 1.0, **_POS_F),
    "pulse_height": _Field(float, 1.2, **_POS_F),
    "pulse_width_us": _Field(float, 1.0, **_POS_F),
}
_SCHEMA_ENERGY = {
    "e_dendritic_event_pj": _Field(float, 58.5, minimum=0.0),
    "f_threshold_block": _Field(float, 0.667, minimum=0.0, maximum=1.0),
    "f_rc_and_weight": _Field(float, 0.09, minimum=0.0, maximum=1.0),
    "f_mux": _Field(float, 0.243, minimum=0.0, maximum=1.0),
    "e_neuron_update_pj": _Field(float, 2.0, minimum=0.0),
    "e_synop_pj": _Field(float, 1.0, minimum=0.0),
}
_SCHEMA_DATA = {
    "synth_coincidence": {
        "n_train": _Field(int, 200, minimum=0),
        "n_val": _Field(int, 50, minimum=0),
        "n_test": _Field(int, 50, minimum=0),
        "lags_ms": _Field(list, [10.0, 40.0], element=_Field(float, **_POS_F)),
        "jitter_ms": _Field(float, 0.0, minimum=0.0),
        "dt_ms": _Field(float, 5.0, **_POS_F),
        "n_steps": _Field(int, 40, minimum=2),
    },
    "ecg": {
        "record": _Field(str),
        "annotations": _Field(str),
        "window": _Field(int, 180, minimum=2),
        "delta": _Field(float, None, nullable=True, **_POS_F),
        "val_fraction": _Field(float, 0.2, **_POS_F, maximum=0.9),
    },
    "raster_kws": {
        "path": _Field(str),
        "max_steps": _Field(int, None, minimum=1, nullable=True),
        "group_size": _Field(int, None, minimum=1, nullable=True),
        "n_groups": _Field(int, 3, minimum=1),
        "val_fraction": _Field(float, 0.2, **_POS_F, maximum=0.9),
        "test_fraction": _Field(float, 0.2, **_POS_F, maximum=0.9),
    },
}
_SCHEMA_SWEEP = {
    "kind": _Field(str, "delay", choices=("delay", "hidden")),
    "means_ms": _Field(list, [22.0], element=_Field(float, **_POS_F)),
    "sigmas": _Field(list, [0.5], element=_Field(float, **_POS_F)),
    "seeds": _Field(list, [0], element=_Field(int, minimum=0)),
    "sizes": _Field(list, [8, 16, 32], element=_Field(int, minimum=1)),
    "eval_noise": _Field(float, 0.1, minimum=0.0),
    "eval_realizations": _Field(int, 5, minimum=1),
}


def _root_schema(task: str) -> dict:
    return {
        "task": _Field(str, choices=tuple(_SCHEMA_DATA)),
        "model": _Field(str, "denram", choices=("denram", "srnn")),
        "seed": _Field(int, 0, minimum=0),
        "out_dir": _Field(str, "runs/run"),
        "architecture": _SCHEMA_ARCH,
        "delay": _SCHEMA_DELAY,
        "noise": _SCHEMA_NOISE,
        "train": _SCHEMA_TRAIN,
        "circuit": _SCHEMA_CIRCUIT,
        "energy": _SCHEMA_ENERGY,
        "data": _SCHEMA_DATA[task],
        "sweep": _SCHEMA_SWEEP,
    }


@dataclass
class ExperimentConfig:
    """Validated configuration tree plus typed builders for the run objects."""

    tree: dict

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config: expected a mapping at top level")
        task = raw.get("task")
        _check_scalar("task", task, _Field(str, choices=tuple(_SCHEMA_DATA)))
        tree = _validate(_root_schema(task), raw, "")
        cfg = ExperimentConfig(tree)
        cfg._cross_check()
        return cfg

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
        if raw is None:
            raise ConfigError(f"{path}: empty config")
        return ExperimentConfig.from_dict(raw)

    def _cross_check(self):
        d = self.tree["delay"]
        if d["clip_min_ms"] >= d["clip_max_ms"]:
            raise ConfigError("delay.clip_min_ms: must be < delay.clip_max_ms")
        c = self.tree["circuit"]
        if c["v_th"] >= c["v_ref"]:
            raise ConfigError("circuit.v_th: must be < circuit.v_ref")
        e = self.tree["energy"]
        s = e["f_threshold_block"] + e["f_rc_and_weight"] + e["f_mux"]
        if abs(s - 1.0) > 1e-9:
            raise ConfigError(
                f"energy: breakdown fractions must sum to 1, got {s!r}")

    # -- typed accessors ----------------------------------------------------

    @property
    def task(self) -> str:
        return self.tree["task"]

    @property
    def model_kind(self) -> str:
        return self.tree["model"]

    @property
    def seed(self) -> int:
        return self.tree["seed"]

    @property
    def out_dir(self) -> str:
        return self.tree["out_dir"]

    def delay_distribution(self) -> DelayDistribution:
        d = self.tree["delay"]
        return DelayDistribution.from_mean(
            mean_s=d["mean_ms"] * 1e-3, sigma=d["sigma"],
            clip_min=d["clip_min_ms"] * 1e-3, clip_max=d["clip_max_ms"] * 1e-3)

    def noise_model(self) -> NoiseModel:
        n = self.tree["noise"]
        seed = self.seed if n["seed"] is None else n["seed"]
        return NoiseModel(relative_std=n["relative_std"], seed=seed)

    def train_config(self) -> TrainConfig:
        t = self.tree["train"]
        o, s = t["optimizer"], t["surrogate"]
        opt = OptimizerSpec(kind=OptimizerKind.SGD if o["kind"] == "sgd"
                            else OptimizerKind.ADAPTIVE_MOMENTS,
                            beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"])
        sur = Surrogate(kind=SurrogateKind(s["kind"]), slope=s["slope"],
                        width=s["width"])
        return TrainConfig(learning_rate=t["learning_rate"],
                           batch_size=t["batch_size"],
                           epochs_pretrain=t["epochs_pretrain"],
                           epochs_noise_aware=t["epochs_noise_aware"],
                           surrogate=sur, noise=self.noise_model(),
                           seed=self.seed, optimizer=opt)

    def circuit_params(self) -> AnalogCircuitParams:
        c = self.tree["circuit"]
        return AnalogCircuitParams(v_ref=c["v_ref"], v_th=c["v_th"],
                                   capacitance=c["capacitance_pf"] * 1e-12,
                                   pulse_height=c["pulse_height"],
                                   pulse_width=c["pulse_width_us"] * 1e-6)

    def energy_table(self) -> EnergyTable:
        e = self.tree["energy"]
        return EnergyTable(
            e_dendritic_event=e["e_dendritic_event_pj"] * 1e-12,
            f_threshold_block=e["f_threshold_block"],
            f_rc_and_weight=e["f_rc_and_weight"], f_mux=e["f_mux"],
            e_neuron_update=e["e_neuron_update_pj"] * 1e-12,
            e_synop=e["e_synop_pj"] * 1e-12)

    def n_out(self, datasets=None) -> int:
        configured = self.tree["architecture"]["n_out"]
        if configured is not None:
            return configured
        if self.task == "synth_coincidence":
            return len(self.tree["data"]["lags_ms"])
        if self.task == "ecg":
            return 2
        if datasets is not None:
            return datasets[0].n_classes
        raise ConfigError("architecture.n_out: required for this invocation")

    def load_datasets(self):
        """Build (train, val, test) LabeledRasterSets for the configured task."""
        d = self.tree["data"]
        if self.task == "synth_coincidence":
            rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, 3000]))
            lags = [v * 1e-3 for v in d["lags_ms"]]
            total = d["n_train"] + d["n_val"] + d["n_test"]
            full = synth_coincidence_dataset(total, lags, d["jitter_ms"] * 1e-3,
                                             d["dt_ms"] * 1e-3, d["n_steps"], rng)
            a, b = d["n_train"], d["n_train"] + d["n_val"]
            return (LabeledRasterSet(full.samples[:a], full.n_classes, "train"),
                    LabeledRasterSet(full.samples[a:b], full.n_classes, "val"),
                    LabeledRasterSet(full.samples[b:], full.n_classes, "test"))
        if self.task == "ecg":
            p = None
            if d["delta"] is not None:
                p = DeltaModParams(delta=d["delta"])
            train_full, test = load_ecg_segments(d["record"], d["annotations"],
                                                 window=d["window"], p=p)
            train, val = split_train_val(train_full, 1.0 - d["val_fraction"],
                                         seed=self.seed)
            return train, val, test
        dataset = load_raster_dataset(d["path"], max_steps=d["max_steps"])
        if d["group_size"] is not None:
            dataset = subsample_channels(dataset, d["group_size"], d["n_groups"])
        rest, test = split_train_val(dataset, 1.0 - d["test_fraction"],
                                     seed=self.seed + 1)
        train, val = split_train_val(rest, 1.0 - d["val_fraction"],
                                     seed=self.seed)
        return train, val, test
