"""Minimal dense feed-forward engine: forward, exact backprop, Adam with
decoupled weight decay, early stopping, and bit-exact JSON model files.

Everything is float64 numpy; no autograd framework. Heads map the last
linear layer into physical units: power heads are capped by a sigmoid,
time heads are kept positive by a scaled softplus.
"""

import copy
import json
from dataclasses import dataclass, field

import numpy as np

MODEL_FILE_VERSION = 1


def relu(z):
    return np.maximum(z, 0.0)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softplus(z):
    return np.logaddexp(0.0, z)


@dataclass
class Normalizer:
    """Per-channel standardization, optionally in log10 domain."""

    mean: np.ndarray
    std: np.ndarray
    log10: np.ndarray          # bool mask: channels standardized in log domain

    @classmethod
    def fit(cls, x: np.ndarray, log_mask=None) -> "Normalizer":
        x = np.asarray(x, dtype=np.float64)
        if log_mask is None:
            log_mask = np.zeros(x.shape[1], dtype=bool)
        log_mask = np.asarray(log_mask, dtype=bool)
        y = np.where(log_mask, np.log10(np.where(log_mask, x, 1.0)), x)
        mean = y.mean(axis=0)
        std = y.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean=mean, std=std, log10=log_mask)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.where(self.log10, np.log10(np.where(self.log10, x, 1.0)), x)
        return (y - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        y = z * self.std + self.mean
        return np.where(self.log10, 10.0 ** y, y)

    def transform_grad(self, x: np.ndarray) -> np.ndarray:
        """d transform(x) / dx, elementwise."""
        x = np.asarray(x, dtype=np.float64)
        lin = 1.0 / self.std
        return np.where(self.log10, lin / (np.where(self.log10, x, 1.0) * np.log(10.0)), lin)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "log10": self.log10.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(
            mean=np.array(d["mean"], dtype=np.float64),
            std=np.array(d["std"], dtype=np.float64),
            log10=np.array(d["log10"], dtype=bool),
        )


@dataclass
class Head:
    """One output head: 'power' (sigmoid capped), 'time' (softplus scaled) or 'raw'."""

    kind: str
    size: int
    scale: np.ndarray      # per-output physical scale; the cap for power heads

    def __post_init__(self):
        if self.kind not in ("power", "time", "raw"):
            raise ValueError(f"unknown head kind {self.kind!r}")
        self.scale = np.broadcast_to(np.asarray(self.scale, dtype=np.float64), (self.size,)).copy()
        if self.kind in ("power", "time") and np.any(self.scale <= 0):
            raise ValueError("head scale must be strictly positive")

    def activate(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "power":
            return self.scale * sigmoid(z)
        if self.kind == "time":
            return self.scale * softplus(z)
        return z

    def activate_grad(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        """d(output)/dz given pre-activation z and output y."""
        if self.kind == "power":
            s = y / self.scale
            return self.scale * s * (1.0 - s)
        if self.kind == "time":
            return self.scale * sigmoid(z)
        return np.ones_like(z)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "size": self.size, "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Head":
        return cls(kind=d["kind"], size=d["size"], scale=np.array(d["scale"], dtype=np.float64))


@dataclass
class MlpSpec:
    layer_sizes: list[int]          # input, hidden..., output
    heads: list[Head]
    hidden_activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_sizes) < 3:
            raise ValueError("need at least one hidden layer")
        if self.hidden_activation != "relu":
            raise ValueError("only relu hidden layers are supported")
        if sum(h.size for h in self.heads) != self.layer_sizes[-1]:
            raise ValueError("head sizes must sum to the output width")

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "heads": [h.to_dict() for h in self.heads],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            layer_sizes=list(d["layer_sizes"]),
            heads=[Head.from_dict(h) for h in d["heads"]],
            hidden_activation=d["hidden_activation"],
        )


def hidden_sizes(n_users: int) -> list[int]:
    """Five hidden layers at 8, 8, 8, 4, 4 times the user count."""
    return [8 * n_users, 8 * n_users, 8 * n_users, 4 * n_users, 4 * n_users]


@dataclass
class MlpModel:
    spec: MlpSpec
    normalizer: Normalizer
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def parameters(self):
        return self.weights + self.biases

    def copy_state(self):
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]

    def load_state(self, state):
        ws, bs = state
        self.weights = [w.copy() for w in ws]
        self.biases = [b.copy() for b in bs]


def init_model(spec: MlpSpec, rng: np.random.Generator, normalizer: Normalizer | None = None) -> MlpModel:
    """Zero-mean uniform init with variance 1/fan_in: W ~ U(-a, a), a = sqrt(3/fan_in)."""
    sizes = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if normalizer is None:
        d = sizes[0]
        normalizer = Normalizer(mean=np.zeros(d), std=np.ones(d), log10=np.zeros(d, dtype=bool))
    return MlpModel(spec=spec, normalizer=normalizer, weights=weights, biases=biases)


def forward(model: MlpModel, x: np.ndarray, cache: dict | None = None) -> list[np.ndarray]:
    """Head outputs in physical units for a batch of physical inputs (B, d_in).

    Pass a dict as `cache` to keep the activations needed by `backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != model.spec.layer_sizes[0]:
        raise ValueError(f"input width {x.shape[1]} != spec width {model.spec.layer_sizes[0]}")
    a = model.normalizer.transform(x)
    activations = [a]
    n_layers = len(model.weights)
    for l in range(n_layers - 1):
        a = relu(a @ model.weights[l] + model.biases[l])
        activations.append(a)
    z_out = a @ model.weights[-1] + model.biases[-1]
    outs = []
    off = 0
    for head in model.spec.heads:
        outs.append(head.activate(z_out[:, off:off + head.size]))
        off += head.size
    if cache is not None:
        cache["activations"] = activations
        cache["z_out"] = z_out
        cache["outs"] = outs
    if squeeze:
        outs = [o[0] for o in outs]
    return outs


def backward(model: MlpModel, cache: dict, head_grads: list[np.ndarray], want_input_grad: bool = False):
    """Parameter gradients from dL/d(head outputs), plus optionally dL/d(normalized input).

    Returns (weight_grads, bias_grads) or (weight_grads, bias_grads, input_grad).
    """
    activations = cache["activations"]
    z_out = cache["z_out"]
    outs = cache["outs"]
    delta = np.empty_like(z_out)
    off = 0
    for head, g, y in zip(model.spec.heads, head_grads, outs):
        z = z_out[:, off:off + head.size]
        delta[:, off:off + head.size] = g * head.activate_grad(z, y)
        off += head.size

    weight_grads = [None] * len(model.weights)
    bias_grads = [None] * len(model.biases)
    for l in range(len(model.weights) - 1, -1, -1):
        weight_grads[l] = activations[l].T @ delta
        bias_grads[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (activations[l] > 0)
        elif want_input_grad:
            delta = delta @ model.weights[0].T
    if want_input_grad:
        return weight_grads, bias_grads, delta
    return weight_grads, bias_grads


class AdamState:
    """Adam with decoupled weight decay over a flat list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * ((m / b1c) / (np.sqrt(v / b2c) + self.eps) + self.weight_decay * p)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    batch: int = 32
    max_epochs: int = 100
    early_stop_window: int = 5          # epochs without a >=5% improvement
    early_stop_rel: float = 0.05
    w_mse: float = 1.0
    w_outage: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "weight_decay", "batch", "max_epochs", "early_stop_rel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.early_stop_window < 1:
            raise ValueError("early_stop_window must be >= 1")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "weight_decay": self.weight_decay, "batch": self.batch,
            "max_epochs": self.max_epochs, "early_stop_window": self.early_stop_window,
            "early_stop_rel": self.early_stop_rel, "w_mse": self.w_mse,
            "w_outage": self.w_outage, "seed": self.seed,
        }


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0
    early_stopped: bool = False
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "stop_epoch": self.stop_epoch,
            "early_stopped": self.early_stopped,
            "config": self.config,
        }


class DivergenceError(RuntimeError):
    pass


def train_loop(models: list[MlpModel], n_train: int, batch_grad_fn, val_loss_fn,
               cfg: TrainConfig, extra_config: dict | None = None) -> TrainReport:
    """Generic mini-batch loop over one or more jointly-trained models.

    batch_grad_fn(idx) -> (loss, [(wgrads, bgrads) per model]) for index batch idx;
    val_loss_fn() -> scalar validation loss. The models end at their best-val state.
    """
    rng = np.random.default_rng(cfg.seed)
    params = []
    for m in models:
        params.extend(m.weights)
        params.extend(m.biases)
    adam = AdamState(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    report = TrainReport(config={**cfg.to_dict(), **(extra_config or {})})
    best_val = np.inf
    best_states = [m.copy_state() for m in models]
    best_history = []        # running best after each epoch

    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n_train)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_train, cfg.batch):
            idx = perm[start:start + cfg.batch]
            loss, grads = batch_grad_fn(idx)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            flat = []
            for wg, bg in grads:
                flat.extend(wg)
                flat.extend(bg)
            adam.step(params, flat)
            epoch_loss += loss
            n_batches += 1
        val = float(val_loss_fn())
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        report.train_losses.append(epoch_loss / n_batches)
        report.val_losses.append(val)
        report.stop_epoch = epoch

        if val < best_val:
            best_val = val
            best_states = [m.copy_state() for m in models]
            report.best_epoch = epoch
        best_history.append(best_val)
        # stop once the best val loss gained less than the threshold over the
        # last `early_stop_window` consecutive epochs
        if epoch > cfg.early_stop_window:
            ref = best_history[-1 - cfg.early_stop_window]
            if best_val > ref * (1.0 - cfg.early_stop_rel):
                report.early_stopped = True
                break

    for m, state in zip(models, best_states):
        m.load_state(state)
    return report


def train(model: MlpModel, train_set, val_set, loss_fn, cfg: TrainConfig) -> TrainReport:
    """Supervised training of a single net.

    train_set/val_set are (X, batch_extras) pairs where batch_extras is a dict
    of per-sample arrays consumed by loss_fn(heads, extras) -> (loss, head_grads).
    """
    x_train, extras_train = train_set
    x_val, extras_val = val_set
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("train and validation sets must be non-empty")

    def batch_grad(idx):
        xb = x_train[idx]
        eb = {k: v[idx] for k, v in extras_train.items()}
        cache = {}
        heads = forward(model, xb, cache)
        loss, head_grads = loss_fn(heads, eb)
        wg, bg = backward(model, cache, head_grads)
        return loss, [(wg, bg)]

    def val_loss():
        heads = forward(model, x_val)
        loss, _ = loss_fn(heads, extras_val)
        return loss

    return train_loop([model], len(x_train), batch_grad, val_loss, cfg)


def joint_mse_outage(
    pred_power: np.ndarray,
    pred_time: np.ndarray,
    label_power: np.ndarray,
    label_time: np.ndarray,
    gamma: np.ndarray,
    demand_bits: float,
    bandwidth_hz: float,
    power_norm: Normalizer,
    time_norm: Normalizer,
    w_mse: float,
    w_outage: float,
):
    """Weighted MSE (standardized labels) + per-user data-outage hinge.

    pred_time carries tau0 in column 0 and the per-user IT durations after it;
    the outage term only sees the IT columns. Returns the scalar loss and the
    gradients w.r.t. the physical power and time outputs.
    """
    b, n = pred_power.shape
    ln2 = np.log(2.0)
    pn = power_norm.transform(pred_power)
    tn = time_norm.transform(pred_time)
    yn_p = power_norm.transform(label_power)
    yn_t = time_norm.transform(label_time)
    n_dims = pn.shape[1] + tn.shape[1]
    mse = (np.sum((pn - yn_p) ** 2) + np.sum((tn - yn_t) ** 2)) / (b * n_dims)

    tau = pred_time[:, 1:]
    snr = pred_power * gamma
    rate = bandwidth_hz * np.log2(1.0 + snr)
    shortfall = demand_bits - tau * rate
    active = shortfall > 0           # subgradient 0 at the hinge kink
    outage = np.sum(np.where(active, shortfall, 0.0)) / (b * n * demand_bits)

    loss = w_mse * mse + w_outage * outage

    g_power = w_mse * 2.0 * (pn - yn_p) * power_norm.transform_grad(pred_power) / (b * n_dims)
    g_time = w_mse * 2.0 * (tn - yn_t) * time_norm.transform_grad(pred_time) / (b * n_dims)
    scale = w_outage / (b * n * demand_bits)
    g_power += np.where(active, -scale * tau * bandwidth_hz * gamma / ((1.0 + snr) * ln2), 0.0)
    g_time[:, 1:] += np.where(active, -scale * rate, 0.0)
    return loss, g_power, g_time


def save_model(model: MlpModel, path):
    doc = {
        "version": MODEL_FILE_VERSION,
        "spec": model.spec.to_dict(),
        "normalizer": model.normalizer.to_dict(),
        "weights": [
            {"w": w.tolist(), "b": b.tolist()} for w, b in zip(model.weights, model.biases)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> MlpModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc["version"] != MODEL_FILE_VERSION:
        raise ValueError(f"unsupported model file version {doc['version']}")
    spec = MlpSpec.from_dict(doc["spec"])
    weights = [np.array(layer["w"], dtype=np.float64) for layer in doc["weights"]]
    biases = [np.array(layer["b"], dtype=np.float64) for layer in doc["weights"]]
    return MlpModel(
        spec=spec,
        normalizer=Normalizer.from_dict(doc["normalizer"]),
        weights=weights,
        biases=biases,
    )
