"""IRS-Net: a fully connected phase/time-split predictor trained without labels.

Architecture: ``F_s`` inputs, five hidden layers of ``floor(n_i * F_s)``
units (affine -> ReLU -> batch norm), and a sigmoid output of ``2N + 1``
units split into ET phases, IT phases and the time split.  Training minimises
the negative mean throughput of a minibatch.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .channel import Dataset, SystemParams, feature_length
from .evaluator import TAU_EPS, TWO_PI, PhaseConfig, batch_loss, taped_throughput, wrap_phase
from .rng import Stream

log = logging.getLogger(__name__)

ROW_LARGE_NL = (2.5, 3.0, 2.5, 2.0, 0.5)
ROW_SMALL_NL = (3.5, 4.5, 4.5, 4.0, 1.0)
ROW_INTERFERENCE = (1.25, 2.75, 2.75, 2.05, 0.75)
ROW_M8_LIGHT = (1.05, 1.35, 1.45, 1.25, 0.5)

# (M, N, P_I in dBm or None for noise-limited) -> multipliers
_TABLE_I: dict[tuple[int, int, float | None], tuple] = {}
for _mn in [(2, 16), (2, 32), (8, 16), (4, 16), (4, 32), (8, 32)]:
    _TABLE_I[_mn + (None,)] = ROW_LARGE_NL
for _mn in [(8, 8), (2, 8), (4, 8)]:
    _TABLE_I[_mn + (None,)] = ROW_SMALL_NL
for _m in (2, 4, 8):
    for _n in (8, 16, 32):
        _TABLE_I[(_m, _n, 10.0)] = ROW_INTERFERENCE
for _n, _dbm in [(16, 0.0), (8, 5.0), (8, 15.0), (16, 15.0)]:
    _TABLE_I[(8, _n, _dbm)] = ROW_INTERFERENCE
for _n, _dbm in [(8, 0.0), (32, 5.0), (16, 5.0), (32, 15.0)]:
    _TABLE_I[(8, _n, _dbm)] = ROW_M8_LIGHT


def layer_multipliers(M: int, N: int, P_I: float) -> tuple:
    """Hidden-layer multipliers for a configuration; ``P_I`` in watts."""
    key_dbm = None if P_I <= 0 else round(10.0 * math.log10(P_I) + 30.0, 2)
    return _TABLE_I.get((M, N, key_dbm), ROW_INTERFERENCE)


def hidden_sizes(M: int, N: int, P_I: float, F_s: int | None = None) -> list[int]:
    if F_s is None:
        F_s = feature_length(M, N, P_I > 0)
    # round() guards against products such as 2.05 * 90 landing just below an integer
    return [int(math.floor(round(n * F_s, 9))) for n in layer_multipliers(M, N, P_I)]


@dataclass
class NetworkParams:
    F_s: int
    hidden: list[int]
    N: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn_gamma: list[np.ndarray]
    bn_beta: list[np.ndarray]
    bn_mean: list[np.ndarray]
    bn_var: list[np.ndarray]
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3
    bn_after_relu: bool = True
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    seed: int = 0

    @property
    def out_size(self) -> int:
        return 2 * self.N + 1

    @property
    def layer_sizes(self) -> list[int]:
        return [self.F_s] + list(self.hidden) + [self.out_size]

    def trainable(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = W
            out[f"b{i}"] = b
        for i, (g, be) in enumerate(zip(self.bn_gamma, self.bn_beta)):
            out[f"gamma{i}"] = g
            out[f"beta{i}"] = be
        return out

    def set_trainable(self, values: dict[str, np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = values[f"W{i}"]
            self.biases[i] = values[f"b{i}"]
        for i in range(len(self.bn_gamma)):
            self.bn_gamma[i] = values[f"gamma{i}"]
            self.bn_beta[i] = values[f"beta{i}"]

    def copy(self) -> "NetworkParams":
        return copy.deepcopy(self)


def init_network(F_s: int, hidden: list[int], N: int, seed: int, **options) -> NetworkParams:
    """Xavier-uniform weights, zero biases, identity batch norm."""
    if F_s < 1 or N < 1 or any(h < 1 for h in hidden):
        raise ValueError("layer sizes must be >= 1")
    rng = Stream(seed)
    sizes = [F_s] + list(hidden) + [2 * N + 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform((fan_in, fan_out), -limit, limit))
        biases.append(np.zeros(fan_out))
    return NetworkParams(
        F_s=F_s, hidden=list(hidden), N=N, weights=weights, biases=biases,
        bn_gamma=[np.ones(h) for h in hidden], bn_beta=[np.zeros(h) for h in hidden],
        bn_mean=[np.zeros(h) for h in hidden], bn_var=[np.ones(h) for h in hidden],
        seed=seed, **options)


def fit_input_normalization(params: NetworkParams, X: np.ndarray) -> None:
    """Per-feature standardisation from training data (optional preprocessing)."""
    params.input_mean = X.mean(axis=0)
    std = X.std(axis=0)
    params.input_scale = 1.0 / np.where(std > 0, std, 1.0)


def _preprocess(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.F_s:
        raise ValueError(f"expected features of shape (B, {params.F_s}), got {X.shape}")
    if params.input_mean is not None:
        X = (X - params.input_mean) * params.input_scale
    return X


def _split_output(params: NetworkParams, s: np.ndarray) -> PhaseConfig:
    N = params.N
    return PhaseConfig(wrap_phase(TWO_PI * s[:, :N]), wrap_phase(TWO_PI * s[:, N:2 * N]),
                       np.clip(s[:, 2 * N], TAU_EPS, 1.0 - TAU_EPS))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def hidden_activations(params: NetworkParams, X: np.ndarray, training: bool = False) -> list[np.ndarray]:
    """Outputs of every hidden layer (after its batch norm) for flat features ``(B, F_s)``."""
    h = _preprocess(params, X)
    if training and h.shape[0] < 2:
        raise ValueError("training-mode forward needs a batch of at least 2")
    out = []
    for i in range(len(params.hidden)):
        h = h @ params.weights[i] + params.biases[i]
        if params.bn_after_relu:
            h = np.maximum(h, 0.0)
        if training:
            mu, var = h.mean(axis=0), h.var(axis=0)
        else:
            mu, var = params.bn_mean[i], params.bn_var[i]
        h = params.bn_gamma[i] * (h - mu) / np.sqrt(var + params.bn_eps) + params.bn_beta[i]
        if not params.bn_after_relu:
            h = np.maximum(h, 0.0)
        out.append(h)
    return out


def forward(params: NetworkParams, X: np.ndarray, training: bool = False) -> PhaseConfig:
    """Map flat features ``(B, F_s)`` to one complete PhaseConfig per row.

    Training mode normalises with batch statistics (needs B >= 2);
    inference mode uses the running statistics, so rows are independent.
    """
    acts = hidden_activations(params, X, training)
    h = acts[-1] if acts else _preprocess(params, X)
    z = h @ params.weights[-1] + params.biases[-1]
    return _split_output(params, _sigmoid(z))


class TrainingGraph:
    """The loss graph for one architecture, recorded once and rebound per minibatch."""

    def __init__(self, params: NetworkParams, M: int, interference: bool, system: SystemParams):
        self.tape = tape = ad.Tape()
        X = tape.constant("X")
        self.batch_stats: list[tuple[ad.Node, ad.Node]] = []
        h = tape.constant("X_in")
        for i in range(len(params.hidden)):
            W, b = tape.parameter(f"W{i}"), tape.parameter(f"b{i}")
            h = ad.matmul(h, W) + b
            if params.bn_after_relu:
                h = ad.relu(h)
            mu = h.mean(axis=0)
            centred = h - mu
            var = ad.square(centred).mean(axis=0)
            self.batch_stats.append((mu, var))
            g, be = tape.parameter(f"gamma{i}"), tape.parameter(f"beta{i}")
            h = g * centred / ad.sqrt(var + params.bn_eps) + be
            if not params.bn_after_relu:
                h = ad.relu(h)
        k = len(params.hidden)
        z = ad.matmul(h, tape.parameter(f"W{k}")) + tape.parameter(f"b{k}")
        s = ad.sigmoid(z)
        N = params.N
        theta_ET = TWO_PI * s[:, :N]
        theta_IT = TWO_PI * s[:, N:2 * N]
        tau = ad.clip(s[:, 2 * N], TAU_EPS, 1.0 - TAU_EPS)
        self.throughput = taped_throughput(X, theta_ET, theta_IT, tau, M, N, interference, system)
        self.loss = -self.throughput.mean()

    def loss_and_grad(self, params: NetworkParams, X: np.ndarray):
        values = params.trainable()
        consts = {"X": X, "X_in": _preprocess(params, X)}
        loss = float(self.tape.forward(values, consts, self.loss))
        grads = self.tape.backward(self.loss)
        stats = [(mu.value, var.value) for mu, var in self.batch_stats]
        return loss, grads, stats


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameters, mutates ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name!r} at step {state.t + 1}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out, state


def lr_schedule(step: int, initial: float, decay_rate: float, decay_steps: int) -> float:
    """Staircase exponential decay."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return initial * decay_rate ** (step // decay_steps)


@dataclass
class TrainConfig:
    batch_size: int = 3000
    max_epochs: int = 500
    learning_rate: float = 1e-3
    decay_rate: float = 0.5
    decay_steps: int = 50_000
    patience: int = 20
    seed: int = 0
    shuffle: bool = True
    normalize_inputs: bool = False
    train_path: str | None = None
    val_path: str | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


# dataset sizes (train, validation, test) alongside the matching TrainConfig
FULL_SIZES = (1_200_000, 10_000, 1000)
DESK_SIZES = (100_000, 10_000, 1000)


def full_config(**kw) -> TrainConfig:
    return TrainConfig(**kw)


def desk_config(**kw) -> TrainConfig:
    # the short schedule needs standardised inputs: raw features are ~1e-3 in scale
    kw.setdefault("max_epochs", 100)
    kw.setdefault("normalize_inputs", True)
    return TrainConfig(**kw)


@dataclass
class TrainResult:
    params: NetworkParams
    history: list[dict]
    best_epoch: int
    stop_reason: str


def _check_match(ds: Dataset, params: NetworkParams) -> None:
    if ds.feature_size != params.F_s or ds.N != params.N:
        raise ValueError(f"dataset (M={ds.M}, N={ds.N}, interference={ds.interference}, "
                         f"F_s={ds.feature_size}) does not match network "
                         f"(F_s={params.F_s}, N={params.N})")


def evaluate_loss(params: NetworkParams, ds: Dataset, system: SystemParams, chunk: int = 20_000) -> float:
    """Inference-mode loss over a whole dataset."""
    total = 0.0
    for start in range(0, ds.count, chunk):
        X = ds.features[start:start + chunk]
        cfg = forward(params, X, training=False)
        total += -batch_loss(ds.structured(slice(start, start + chunk)), cfg, system) * X.shape[0]
    return -total / ds.count


def train(train_set: Dataset, val_set: Dataset, params: NetworkParams, cfg: TrainConfig,
          system: SystemParams, progress=None) -> TrainResult:
    """Minibatch Adam on the negative mean throughput.

    Early stopping watches the epoch-mean training loss; the returned
    parameters are those with the best validation loss.
    """
    _check_match(train_set, params)
    _check_match(val_set, params)
    params = params.copy()
    if cfg.normalize_inputs and params.input_mean is None:
        fit_input_normalization(params, train_set.features)
    graph = TrainingGraph(params, train_set.M, train_set.interference, system)
    state = AdamState()
    rng = Stream(cfg.seed)
    mom = params.bn_momentum
    n = train_set.count
    B = min(cfg.batch_size, n)
    history: list[dict] = []
    best_val, best_params, best_epoch = math.inf, params.copy(), 0
    best_train, stale = math.inf, 0
    step = 0
    reason = "max_epochs"
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.argsort(rng.uniform(n)) if cfg.shuffle else np.arange(n)
        batch_losses, batch_sizes = [], []
        lr = lr_schedule(step, cfg.learning_rate, cfg.decay_rate, cfg.decay_steps)
        try:
            for start in range(0, n, B):
                idx = order[start:start + B]
                if idx.size < 2:
                    continue
                lr = lr_schedule(step, cfg.learning_rate, cfg.decay_rate, cfg.decay_steps)
                loss, grads, stats = graph.loss_and_grad(params, train_set.features[idx])
                if not math.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
                new, state = adam_step(params.trainable(), grads, state, lr)
                params.set_trainable(new)
                for i, (mu, var) in enumerate(stats):
                    params.bn_mean[i] = mom * params.bn_mean[i] + (1.0 - mom) * mu
                    params.bn_var[i] = mom * params.bn_var[i] + (1.0 - mom) * var
                batch_losses.append(loss)
                batch_sizes.append(idx.size)
                step += 1
        except FloatingPointError as exc:
            log.error("training aborted: %s", exc)
            reason = f"aborted: {exc}"
            break
        train_loss = float(np.average(batch_losses, weights=batch_sizes))
        val_loss = evaluate_loss(params, val_set, system)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr})
        if progress is not None:
            progress(history[-1])
        if val_loss < best_val:
            best_val, best_params, best_epoch = val_loss, params.copy(), epoch
        if train_loss < best_train:
            best_train, stale = train_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                reason = "early_stop"
                break
    return TrainResult(params=best_params, history=history, best_epoch=best_epoch, stop_reason=reason)


def infer(params: NetworkParams, X: np.ndarray) -> PhaseConfig:
    return forward(params, X, training=False)


# ---- checkpoints -----------------------------------------------------------

CHECKPOINT_FORMAT = "irs-net-checkpoint"


def _arr(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}


def checkpoint_dict(params: NetworkParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "architecture": {
            "F_s": params.F_s, "hidden": list(params.hidden), "N": params.N,
            "bn_after_relu": params.bn_after_relu, "bn_momentum": params.bn_momentum,
            "bn_eps": params.bn_eps,
        },
        "seed": params.seed,
        "layers": [{"W": _arr(W), "b": _arr(b)} for W, b in zip(params.weights, params.biases)],
        "batch_norm": [
            {"gamma": _arr(g), "beta": _arr(be), "running_mean": _arr(mu), "running_var": _arr(v)}
            for g, be, mu, v in zip(params.bn_gamma, params.bn_beta, params.bn_mean, params.bn_var)
        ],
        "input_norm": None if params.input_mean is None else
        {"mean": _arr(params.input_mean), "scale": _arr(params.input_scale)},
    }


def save_checkpoint(params: NetworkParams, path: str | os.PathLike) -> None:
    # json writes floats with repr, the shortest string that round-trips exactly
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(params), fh, indent=1)
        fh.write("\n")


def _get(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ValueError(f"checkpoint missing field {where}{key}")
    return d[key]


def _load_arr(d: dict, key: str, where: str) -> np.ndarray:
    obj = _get(d, key, where)
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.array(obj["data"], dtype=np.float64)
        return data.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"checkpoint field {where}{key} is malformed: {exc}") from exc


def params_from_dict(doc: dict) -> NetworkParams:
    if _get(doc, "format", "") != CHECKPOINT_FORMAT:
        raise ValueError(f"checkpoint field format is not {CHECKPOINT_FORMAT!r}")
    arch = _get(doc, "architecture", "")
    F_s = int(_get(arch, "F_s", "architecture."))
    hidden = [int(h) for h in _get(arch, "hidden", "architecture.")]
    N = int(_get(arch, "N", "architecture."))
    layers = _get(doc, "layers", "")
    bns = _get(doc, "batch_norm", "")
    if len(layers) != len(hidden) + 1 or len(bns) != len(hidden):
        raise ValueError("checkpoint field layers/batch_norm has the wrong number of entries")
    weights = [_load_arr(l, "W", f"layers[{i}].") for i, l in enumerate(layers)]
    biases = [_load_arr(l, "b", f"layers[{i}].") for i, l in enumerate(layers)]
    g = [_load_arr(b, "gamma", f"batch_norm[{i}].") for i, b in enumerate(bns)]
    be = [_load_arr(b, "beta", f"batch_norm[{i}].") for i, b in enumerate(bns)]
    mu = [_load_arr(b, "running_mean", f"batch_norm[{i}].") for i, b in enumerate(bns)]
    var = [_load_arr(b, "running_var", f"batch_norm[{i}].") for i, b in enumerate(bns)]
    sizes = [F_s] + hidden + [2 * N + 1]
    for i, W in enumerate(weights):
        if W.shape != (sizes[i], sizes[i + 1]):
            raise ValueError(f"checkpoint field layers[{i}].W has shape {W.shape}, "
                             f"expected {(sizes[i], sizes[i + 1])}")
    for i, v in enumerate(var):
        if np.any(v <= 0):
            raise ValueError(f"checkpoint field batch_norm[{i}].running_var must be positive")
    norm = _get(doc, "input_norm", "")
    params = NetworkParams(
        F_s=F_s, hidden=hidden, N=N, weights=weights, biases=biases,
        bn_gamma=g, bn_beta=be, bn_mean=mu, bn_var=var,
        bn_momentum=float(_get(arch, "bn_momentum", "architecture.")),
        bn_eps=float(_get(arch, "bn_eps", "architecture.")),
        bn_after_relu=bool(_get(arch, "bn_after_relu", "architecture.")),
        seed=int(_get(doc, "seed", "")),
    )
    if norm is not None:
        params.input_mean = _load_arr(norm, "mean", "input_norm.")
        params.input_scale = _load_arr(norm, "scale", "input_norm.")
    return params


def load_checkpoint(path: str | os.PathLike) -> NetworkParams:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    return params_from_dict(doc)


def network_for(system: SystemParams, seed: int, **options) -> NetworkParams:
    """Fresh network sized for ``system`` by the layer-multiplier table."""
    F_s = feature_length(system.M, system.N, system.interference)
    return init_network(F_s, hidden_sizes(system.M, system.N, system.P_I, F_s), system.N, seed, **options)

