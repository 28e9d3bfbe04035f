"""Gradient training with read-noise injection.

Gradients are computed by hand (numpy only). The dendritic delay network
with a max-potential readout is differentiable end to end: the only
nonlinearity is max-over-time, whose gradient is routed to the earliest
argmax bin. The recurrent baseline needs surrogate derivatives for its
hidden threshold crossings; the backward pass carries both the recurrent
input path and the reset path d v[t+1] / d s[t] = -alpha * v[t].

Noise-aware training uses a straight-through estimator: each batch draws a
fresh weight perturbation w~ = w + N(0, (rel * max|w|)^2), the forward and
backward passes run on w~, and the update is applied to the clean w.

For gradient checking, the recurrent model also runs in a relaxed mode
where the hard threshold is replaced by a soft spike whose true derivative
equals the surrogate shape; finite differences are exact against that
relaxed system, which shares every line of the backward pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.signal import lfilter

from .data import LabeledRasterSet
from .dendrite import DelayBank, expand_with_delays
from .device import DelayDistribution, NoiseModel, apply_read_noise
from .errors import ConfigError, DomainError
from .network import (DenramModel, LifParams, ReadoutMode, SrnnModel,
                      alpha_from_tau)


class SurrogateKind(Enum):
    FAST_SIGMOID = "fast_sigmoid"
    BOXCAR = "boxcar"


@dataclass(frozen=True)
class Surrogate:
    """Pseudo-derivative used for hidden threshold crossings."""

    kind: SurrogateKind = SurrogateKind.FAST_SIGMOID
    slope: float = 10.0   # fast sigmoid sharpness
    width: float = 1.0    # boxcar window around threshold

    def __post_init__(self):
        if self.kind is SurrogateKind.FAST_SIGMOID and not self.slope > 0:
            raise ConfigError("fast sigmoid slope must be positive")
        if self.kind is SurrogateKind.BOXCAR and not self.width > 0:
            raise ConfigError("boxcar width must be positive")


def surrogate_derivative(v: np.ndarray, theta: float, spec: Surrogate) -> np.ndarray:
    """Pseudo-derivative of the spike nonlinearity evaluated at membrane v."""
    z = np.asarray(v, dtype=np.float64) - theta
    if spec.kind is SurrogateKind.FAST_SIGMOID:
        return 1.0 / (1.0 + spec.slope * np.abs(z)) ** 2
    return (np.abs(z) <= spec.width / 2) / spec.width


def _soft_spike(v: np.ndarray, theta: float, slope: float) -> np.ndarray:
    """Relaxed spike in (0, 1); derivative is 0.5 / (1 + slope|z|)^2."""
    z = v - theta
    return 0.5 * (1.0 + z / (1.0 + slope * np.abs(z)))


def _soft_spike_grad(v: np.ndarray, theta: float, slope: float) -> np.ndarray:
    z = v - theta
    return 0.5 / (1.0 + slope * np.abs(z)) ** 2


class OptimizerKind(Enum):
    SGD = "sgd"
    ADAPTIVE_MOMENTS = "adam"


@dataclass(frozen=True)
class OptimizerSpec:
    kind: OptimizerKind = OptimizerKind.ADAPTIVE_MOMENTS
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs_pretrain: int = 100
    epochs_noise_aware: int = 100
    surrogate: Surrogate = field(default_factory=Surrogate)
    noise: NoiseModel | None = None
    seed: int = 0
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs_pretrain < 0 or self.epochs_noise_aware < 0:
            raise ConfigError("epoch counts must be >= 0")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    phase: str                 # "pretrain" | "noise_aware"
    loss: float
    train_acc: float
    val_acc: float
    noise_seed: int
    wall_clock_s: float


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    def append(self, row: EpochStats) -> None:
        self.rows.append(row)

    def best_epoch(self) -> int:
        """Epoch whose weights train() returned: latest maximum of val_acc."""
        if not self.rows:
            raise DomainError("empty history")
        accs = np.asarray([r.val_acc for r in self.rows])
        return int(len(accs) - 1 - np.argmax(accs[::-1]))

    def to_csv(self, path) -> None:
        # wall clock stays out of the file so reruns are byte-identical
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,phase,loss,train_acc,val_acc,noise_seed\n")
            for r in self.rows:
                fh.write(f"{r.epoch},{r.phase},{r.loss!r},{r.train_acc!r},"
                         f"{r.val_acc!r},{r.noise_seed}\n")


@dataclass(frozen=True)
class LossAndGrads:
    loss: float
    grads: dict
    logits: np.ndarray


@dataclass(frozen=True)
class EvalResult:
    mean_accuracy: float
    std_accuracy: float
    per_class_accuracy: np.ndarray
    realization_accuracies: np.ndarray


# --- model factories --------------------------------------------------------

def init_denram_model(n_in: int, n_delays: int, n_out: int,
                      dist: DelayDistribution, dt: float, seed: int,
                      tau_mem: float = 20e-3, tau_out: float = 20e-3,
                      v_threshold: float = 1.0,
                      readout_mode: ReadoutMode = ReadoutMode.MAX_POTENTIAL,
                      shared_bank: bool = True) -> DenramModel:
    """Sample a delay bank and init weights uniform in +-1/sqrt(fan_in)."""
    bank_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    w_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    bank = DelayBank.sample(dist, n_in, n_delays, dt, bank_rng)
    fan_in = n_in * n_delays
    bound = 1.0 / np.sqrt(fan_in)
    weights = w_rng.uniform(-bound, bound, size=(fan_in, n_out))
    lif = LifParams(alpha=alpha_from_tau(dt, tau_mem), v_threshold=v_threshold)
    return DenramModel(bank=bank, weights=weights, lif=lif,
                       alpha_out=alpha_from_tau(dt, tau_out),
                       readout_mode=readout_mode, shared_bank=shared_bank,
                       delay_seed=seed)


def init_srnn_model(n_in: int, n_hidden: int, n_out: int, dt: float, seed: int,
                    tau_mem: float = 20e-3, tau_out: float = 20e-3,
                    v_threshold: float = 1.0) -> SrnnModel:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    w_in = rng.uniform(-1, 1, size=(n_in, n_hidden)) / np.sqrt(n_in)
    w_rec = rng.uniform(-1, 1, size=(n_hidden, n_hidden)) / np.sqrt(n_hidden)
    w_out = rng.uniform(-1, 1, size=(n_hidden, n_out)) / np.sqrt(n_hidden)
    lif = LifParams(alpha=alpha_from_tau(dt, tau_mem), v_threshold=v_threshold)
    return SrnnModel(w_in=w_in, w_rec=w_rec, w_out=w_out, lif_hidden=lif,
                     alpha_out=alpha_from_tau(dt, tau_out))


# --- loss -------------------------------------------------------------------

def _softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, dlogits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    b = logits.shape[0]
    loss = float(-np.mean(np.log(p[np.arange(b), labels] + 1e-300)))
    dlogits = p.copy()
    dlogits[np.arange(b), labels] -= 1.0
    return loss, dlogits / b


def _stack_batch(batch):
    rasters = [r for r, _ in batch]
    labels = np.asarray([y for _, y in batch], dtype=np.int64)
    steps = {r.n_steps for r in rasters}
    if len(steps) != 1:
        raise DomainError("batched training requires rasters of equal n_steps")
    dts = {r.dt for r in rasters}
    if len(dts) != 1:
        raise DomainError("batched training requires a single bin width")
    return rasters, labels


def _adjoint_leaky(grad_u: np.ndarray, alpha: float) -> np.ndarray:
    """Transpose of the causal leaky filter: g_i[t] = sum_{t'>=t} a^(t'-t) g_u[t']."""
    rev = np.flip(grad_u, axis=-1)
    acc = lfilter([1.0], [1.0, -alpha], rev, axis=-1)
    return np.flip(acc, axis=-1)


# --- dendritic network: exact gradients --------------------------------------

def _denram_batch_pass(model: DenramModel, rasters, weights: np.ndarray,
                       want_grads: bool):
    """Forward (and optionally backward caches) for the max-potential path."""
    b = len(rasters)
    logits = np.zeros((b, model.n_out))
    caches = []
    for n, raster in enumerate(rasters):
        e = expand_with_delays(raster, model.bank).data.astype(np.float64)
        i_in = weights.T @ e
        u = lfilter([1.0], [1.0, -model.alpha_out], i_in, axis=-1)
        tstar = np.argmax(u, axis=1)           # earliest max bin
        logits[n] = u[np.arange(model.n_out), tstar]
        if want_grads:
            caches.append((e, tstar))
    return logits, caches


def _denram_backward(model: DenramModel, caches, dlogits: np.ndarray) -> np.ndarray:
    gw = np.zeros_like(model.weights)
    n_out = model.n_out
    for (e, tstar), dl in zip(caches, dlogits):
        gu = np.zeros((n_out, e.shape[1]))
        gu[np.arange(n_out), tstar] = dl
        gi = _adjoint_leaky(gu, model.alpha_out)
        gw += e @ gi.T
    return gw


# --- recurrent baseline: BPTT with surrogate gradients -----------------------

def _srnn_batch_pass(model: SrnnModel, rasters, w_in, w_rec, w_out,
                     surrogate: Surrogate, want_grads: bool,
                     relaxed: bool = False):
    p = model.lif_hidden
    if p.refractory_bins != 0:
        raise DomainError("gradient training requires refractory_bins = 0")
    x = np.stack([r.data for r in rasters]).astype(np.float64)  # (B, n_in, T)
    b, _, t_steps = x.shape
    n_h = model.n_hidden
    i_ff = np.einsum("ih,bit->bht", w_in, x)
    v_hist = np.zeros((b, n_h, t_steps))
    s_hist = np.zeros((b, n_h, t_steps))
    v = np.zeros((b, n_h))
    s_prev = np.zeros((b, n_h))
    for t in range(t_steps):
        v = p.alpha * v * (1.0 - s_prev) + i_ff[:, :, t] + s_prev @ w_rec
        if relaxed:
            s = _soft_spike(v, p.v_threshold, surrogate.slope)
        else:
            s = (v >= p.v_threshold).astype(np.float64)
        v_hist[:, :, t] = v
        s_hist[:, :, t] = s
        s_prev = s
    i_out = np.einsum("ho,bht->bot", w_out, s_hist)
    u = lfilter([1.0], [1.0, -model.alpha_out], i_out, axis=-1)
    tstar = np.argmax(u, axis=2)
    logits = np.take_along_axis(u, tstar[:, :, None], axis=2)[:, :, 0]
    if not want_grads:
        return logits, None
    return logits, (x, v_hist, s_hist, u, tstar)


def _srnn_backward(model: SrnnModel, cache, dlogits, w_rec, w_out,
                   surrogate: Surrogate, relaxed: bool):
    x, v_hist, s_hist, u, tstar = cache
    p = model.lif_hidden
    b, n_h, t_steps = v_hist.shape
    gu = np.zeros_like(u)
    np.put_along_axis(gu, tstar[:, :, None], dlogits[:, :, None], axis=2)
    gi_out = _adjoint_leaky(gu, model.alpha_out)
    gw_out = np.einsum("bht,bot->ho", s_hist, gi_out)
    gs_out = np.einsum("ho,bot->bht", w_out, gi_out)

    if relaxed:
        fprime = _soft_spike_grad(v_hist, p.v_threshold, surrogate.slope)
    else:
        fprime = surrogate_derivative(v_hist, p.v_threshold, surrogate)

    gv_all = np.zeros((b, n_h, t_steps))
    gv_next = np.zeros((b, n_h))
    for t in range(t_steps - 1, -1, -1):
        gs = gs_out[:, :, t].copy()
        if t < t_steps - 1:
            gs += gv_next @ w_rec.T                      # next step's input path
            gs -= p.alpha * v_hist[:, :, t] * gv_next    # reset path
        gv = gs * fprime[:, :, t]
        if t < t_steps - 1:
            gv += p.alpha * (1.0 - s_hist[:, :, t]) * gv_next
        gv_all[:, :, t] = gv
        gv_next = gv
    gw_in = np.einsum("bit,bht->ih", x, gv_all)
    s_prev_hist = np.zeros_like(s_hist)
    s_prev_hist[:, :, 1:] = s_hist[:, :, :-1]
    gw_rec = np.einsum("bht,bgt->hg", s_prev_hist, gv_all)
    return {"w_in": gw_in, "w_rec": gw_rec, "w_out": gw_out}


# --- public loss/grad entry ---------------------------------------------------

def loss_and_grads(model, batch, noise: NoiseModel | None = None,
                   rng: np.random.Generator | None = None,
                   surrogate: Surrogate = Surrogate(),
                   relaxed: bool = False) -> LossAndGrads:
    """Mean softmax cross-entropy and its weight gradients over one batch.

    When `noise` is active the forward/backward run on perturbed weights
    (one fresh draw per layer) while gradients are reported for the clean
    weights (straight-through). `relaxed` switches the recurrent model to
    the soft-spike system whose finite differences match these gradients.
    """
    if not isinstance(model, (DenramModel, SrnnModel)):
        raise DomainError(f"unsupported model type {type(model).__name__}")
    rasters, labels = _stack_batch(batch)
    if labels.min() < 0 or labels.max() >= model.n_out:
        raise DomainError("label out of range for the model's output layer")
    active = noise is not None and noise.relative_std > 0
    if active and rng is None:
        rng = np.random.default_rng(noise.seed)
    if isinstance(model, DenramModel):
        if model.readout_mode is not ReadoutMode.MAX_POTENTIAL:
            raise DomainError("training requires the max-potential readout")
        w = apply_read_noise(model.weights, noise, rng) if active else model.weights
        logits, caches = _denram_batch_pass(model, rasters, w, want_grads=True)
        loss, dlogits = _softmax_xent(logits, labels)
        gw = _denram_backward(model, caches, dlogits)
        return LossAndGrads(loss, {"weights": gw}, logits)
    if active:
        w_in = apply_read_noise(model.w_in, noise, rng)
        w_rec = apply_read_noise(model.w_rec, noise, rng)
        w_out = apply_read_noise(model.w_out, noise, rng)
    else:
        w_in, w_rec, w_out = model.w_in, model.w_rec, model.w_out
    logits, cache = _srnn_batch_pass(model, rasters, w_in, w_rec, w_out,
                                     surrogate, want_grads=True,
                                     relaxed=relaxed)
    loss, dlogits = _softmax_xent(logits, labels)
    grads = _srnn_backward(model, cache, dlogits, w_rec, w_out,
                           surrogate, relaxed)
    return LossAndGrads(loss, grads, logits)


# --- optimizers ---------------------------------------------------------------

class _Optimizer:
    def __init__(self, spec: OptimizerSpec, lr: float):
        self.spec = spec
        self.lr = lr
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        if self.spec.kind is OptimizerKind.SGD:
            for k, w in params.items():
                out[k] = w - self.lr * grads[k]
            return out
        b1, b2, eps = self.spec.beta1, self.spec.beta2, self.spec.eps
        for k, w in params.items():
            g = grads[k]
            m = self.m.get(k, np.zeros_like(w))
            v = self.v.get(k, np.zeros_like(w))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            out[k] = w - self.lr * m_hat / (np.sqrt(v_hat) + eps)
        return out


def _get_params(model) -> dict:
    if isinstance(model, DenramModel):
        return {"weights": model.weights}
    return {"w_in": model.w_in, "w_rec": model.w_rec, "w_out": model.w_out}


def _set_params(model, params: dict):
    if isinstance(model, DenramModel):
        return model.with_weights(params["weights"])
    return replace(model, w_in=params["w_in"], w_rec=params["w_rec"],
                   w_out=params["w_out"])


# --- inference helpers ----------------------------------------------------------

def _batch_logits(model, rasters, params: dict | None = None,
                  surrogate: Surrogate = Surrogate()) -> np.ndarray:
    if isinstance(model, DenramModel):
        w = params["weights"] if params else model.weights
        if model.readout_mode is ReadoutMode.MAX_POTENTIAL:
            logits, _ = _denram_batch_pass(model, rasters, w, want_grads=False)
            return logits
        from .network import denram_forward
        m = model.with_weights(w)
        return np.stack([denram_forward(m, r).logits for r in rasters])
    if params:
        w_in, w_rec, w_out = params["w_in"], params["w_rec"], params["w_out"]
    else:
        w_in, w_rec, w_out = model.w_in, model.w_rec, model.w_out
    logits, _ = _srnn_batch_pass(model, rasters, w_in, w_rec, w_out,
                                 surrogate, want_grads=False)
    return logits


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


# --- training loop ---------------------------------------------------------------

def train(model, train_set: LabeledRasterSet, val_set: LabeledRasterSet,
          cfg: TrainConfig):
    """Two-phase training: pretrain without noise, then noise-aware.

    Fresh noise is drawn per batch in the second phase. Validation accuracy
    is measured on clean weights each epoch; the weights with the best
    validation accuracy are returned, ties broken toward the latest epoch
    so noise-aware refinements of an already-saturated validation score are
    kept. With zero epochs the initial model is returned unchanged.

    Returns (best_model, history).
    """
    if train_set.n_samples == 0:
        raise DomainError("training set is empty")
    history = TrainHistory()
    total = cfg.epochs_pretrain + cfg.epochs_noise_aware
    if total == 0:
        return model, history
    opt = _Optimizer(cfg.optimizer, cfg.learning_rate)
    params = _get_params(model)
    best = (-1.0, model)
    n = train_set.n_samples
    val_rasters = [r for r, _ in val_set.samples]
    val_labels = np.asarray([y for _, y in val_set.samples], dtype=np.int64)
    for epoch in range(total):
        t0 = time.perf_counter()
        phase = "pretrain" if epoch < cfg.epochs_pretrain else "noise_aware"
        noise = cfg.noise if phase == "noise_aware" else None
        noise_seed = int(np.random.SeedSequence([cfg.seed, 1000 + epoch])
                         .generate_state(1)[0])
        noise_rng = np.random.default_rng(noise_seed)
        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 2000 + epoch]))
        perm = shuffle_rng.permutation(n)
        losses = []
        n_correct = 0
        for k in range(0, n, cfg.batch_size):
            batch = [train_set.samples[i] for i in perm[k:k + cfg.batch_size]]
            model_now = _set_params(model, params)
            lg = loss_and_grads(model_now, batch, noise, noise_rng, cfg.surrogate)
            params = opt.step(params, lg.grads)
            losses.append(lg.loss * len(batch))
            labels = np.asarray([y for _, y in batch], dtype=np.int64)
            n_correct += int(np.sum(np.argmax(lg.logits, axis=1) == labels))
        model_now = _set_params(model, params)
        if val_rasters:
            val_acc = _accuracy(
                _batch_logits(model_now, val_rasters, surrogate=cfg.surrogate),
                val_labels)
        else:
            val_acc = float(n_correct) / n
        row = EpochStats(epoch=epoch, phase=phase,
                         loss=float(np.sum(losses) / n),
                         train_acc=float(n_correct) / n, val_acc=val_acc,
                         noise_seed=noise_seed,
                         wall_clock_s=time.perf_counter() - t0)
        history.append(row)
        if val_acc >= best[0]:
            best = (val_acc, model_now)
    return best[1], history


def evaluate(model, dataset: LabeledRasterSet, noise: NoiseModel | None = None,
             n_realizations: int = 1, seed: int = 0,
             surrogate: Surrogate = Surrogate()) -> EvalResult:
    """Accuracy under read-noise, averaged over weight realizations.

    Each realization redraws every weight layer once; with no noise all
    realizations coincide and the std is zero.
    """
    if n_realizations < 1:
        raise DomainError("n_realizations must be >= 1")
    if dataset.n_samples == 0:
        raise DomainError("evaluation set is empty")
    rasters = [r for r, _ in dataset.samples]
    labels = np.asarray([y for _, y in dataset.samples], dtype=np.int64)
    active = noise is not None and noise.relative_std > 0
    rng = np.random.default_rng(seed)
    accs = np.zeros(n_realizations)
    hits_per_class = np.zeros(dataset.n_classes)
    counts = np.bincount(labels, minlength=dataset.n_classes).astype(np.float64)
    clean_logits = None
    for k in range(n_realizations):
        if active:
            params = {name: apply_read_noise(w, noise, rng)
                      for name, w in _get_params(model).items()}
            logits = _batch_logits(model, rasters, params, surrogate)
        else:
            if clean_logits is None:
                clean_logits = _batch_logits(model, rasters, surrogate=surrogate)
            logits = clean_logits
        pred = np.argmax(logits, axis=1)
        accs[k] = np.mean(pred == labels)
        np.add.at(hits_per_class, labels, (pred == labels).astype(np.float64))
    with np.errstate(invalid="ignore"):
        per_class = hits_per_class / (counts * n_realizations)
    return EvalResult(mean_accuracy=float(accs.mean()),
                      std_accuracy=float(accs.std()),
                      per_class_accuracy=per_class,
                      realization_accuracies=accs)
