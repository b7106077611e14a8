"""
Explainable fire-occurrence network.

Static features pass through a dense trunk whose two outputs are an
intercept ``beta0`` and a fire-weather sensitivity ``beta1``. The fire
probability is ``logistic(beta0 + beta1 * k)`` with ``k = KBDI / 800``, so
KBDI never enters the trunk and the betas can be mapped per cell.

With ``nonneg_beta1`` the raw second output goes through softplus, which
makes the probability nondecreasing in KBDI for every location.

Weights are stored as ``W`` of shape (fan_in, fan_out) and applied as
``x @ W + b``. Hidden layers use a leaky rectifier; the output layer is linear.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError, ShapeError, SpecError, TrainingError
from .features import FeatureRegistry, FeatureVector, feature_cube, normalize_kbdi, normalize_static
from .raster_store import RasterGrid, check_same_geometry

P_CLAMP = 1e-12
DEFAULT_DIMS = (54, 64, 32, 2)
UNCONSTRAINED = "unconstrained"
NONNEG_BETA1 = "nonneg_beta1"


def logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


@dataclass
class NetworkParams:
    weights: list  # W_i, shape (dims[i], dims[i+1])
    biases: list  # b_i, shape (dims[i+1],)
    slope: float = 0.01
    head_constraint: str = UNCONSTRAINED

    def __post_init__(self):
        if self.head_constraint not in (UNCONSTRAINED, NONNEG_BETA1):
            raise SpecError(f"unknown head constraint {self.head_constraint!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} are incompatible")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} expects {w.shape[0]} inputs, previous layer gives {self.weights[i - 1].shape[1]}")
        if self.weights[-1].shape[1] != 2:
            raise ShapeError("the last layer must have exactly two outputs (beta0, beta1)")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def nonneg_beta1(self) -> bool:
        return self.head_constraint == NONNEG_BETA1

    def arrays(self) -> list[np.ndarray]:
        """Parameters in storage order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays) -> "NetworkParams":
        return NetworkParams([a.copy() for a in arrays[0::2]], [a.copy() for a in arrays[1::2]],
                             self.slope, self.head_constraint)

    def copy(self) -> "NetworkParams":
        return self.with_arrays(self.arrays())


def init_params(layer_dims=DEFAULT_DIMS, seed=0, slope=0.01, head_constraint=UNCONSTRAINED) -> NetworkParams:
    """He-normal weights for the leaky rectifier, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    weights[-1] *= 0.1
    return NetworkParams(weights, biases, slope, head_constraint)


def _trunk(params: NetworkParams, x: np.ndarray):
    """Raw trunk output (n, 2) and the per-layer pre-activations for backprop."""
    if x.shape[-1] != params.layer_dims[0]:
        raise ShapeError(f"expected {params.layer_dims[0]} static features, got {x.shape[-1]}")
    acts, pre = [x], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.where(z > 0, z, params.slope * z)
        acts.append(h)
    return h, acts, pre


def betas(params: NetworkParams, static) -> tuple[np.ndarray, np.ndarray]:
    """(beta0, beta1) for normalized static features of shape (n, d) or (d,)."""
    x = np.atleast_2d(np.asarray(static, dtype=np.float64))
    out, _, _ = _trunk(params, x)
    beta0 = out[:, 0]
    beta1 = softplus(out[:, 1]) if params.nonneg_beta1 else out[:, 1]
    return beta0, beta1


def predict_batch(params: NetworkParams, static, k) -> np.ndarray:
    """Fire probability for normalized static rows and normalized KBDI ``k``."""
    b0, b1 = betas(params, static)
    k = np.broadcast_to(np.asarray(k, dtype=np.float64), b0.shape)
    z = b0 + b1 * k
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logit in forward pass")
    return logistic(z)


def forward(params: NetworkParams, v: FeatureVector):
    """(p, beta0, beta1) for one normalized feature vector.

    ``v.kbdi_annual_mean`` is the already-scaled ``k`` (see
    :func:`wildfire_risk.features.apply_normalizer`).
    """
    b0, b1 = betas(params, v.static_features)
    z = b0[0] + b1[0] * float(v.kbdi_annual_mean)
    if not np.isfinite(z):
        raise NumericError("non-finite logit in forward pass")
    return float(logistic(z)), float(b0[0]), float(b1[0])


def loss_bce(p, label):
    """Binary cross-entropy per sample with ``p`` clamped to [1e-12, 1 - 1e-12]."""
    p = np.clip(np.asarray(p, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)
    y = np.asarray(label, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def batch_loss(params: NetworkParams, static, k, labels) -> float:
    return float(np.mean(loss_bce(predict_batch(params, static, k), labels)))


def gradients(params: NetworkParams, static, k, labels) -> list[np.ndarray]:
    """Gradient of the mean clamped BCE, in :meth:`NetworkParams.arrays` order."""
    x = np.atleast_2d(np.asarray(static, dtype=np.float64))
    n = x.shape[0]
    if n == 0:
        raise SpecError("gradient of an empty batch")
    k = np.broadcast_to(np.asarray(k, dtype=np.float64), (n,))
    y = np.asarray(labels, dtype=np.float64)
    out, acts, pre = _trunk(params, x)
    raw1 = out[:, 1]
    beta1 = softplus(raw1) if params.nonneg_beta1 else raw1
    p = logistic(out[:, 0] + beta1 * k)
    # d(-log-likelihood)/dz is p - y; the clamp flattens the loss outside its range
    live = (p > P_CLAMP) & (p < 1.0 - P_CLAMP)
    dz = np.where(live, p - y, 0.0) / n
    dbeta1 = dz * k
    draw1 = dbeta1 * logistic(raw1) if params.nonneg_beta1 else dbeta1
    delta = np.column_stack([dz, draw1])

    grads = [None] * (2 * len(params.weights))
    for i in range(len(params.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * np.where(pre[i - 1] > 0, 1.0, params.slope)
    return grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    patience: int = 10
    head_constraint: str = UNCONSTRAINED
    hidden: tuple = (64, 32)
    slope: float = 0.01

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.patience) < 1:
            raise SpecError("epochs, batch_size and patience must be positive")
        if not (self.learning_rate > 0 and self.epsilon > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise SpecError("invalid optimizer hyper-parameters")


class Adam:
    """Adaptive-moment gradient descent over a list of arrays (updated in place)."""

    def __init__(self, arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: NetworkParams
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = 0


def train(train_set, validation_set, config: TrainConfig = TrainConfig(), init: NetworkParams | None = None) -> TrainResult:
    """Fit the network with minibatch Adam and early stopping on validation loss.

    Both sets are ``(static, k, labels)`` triples of normalized arrays. The
    returned parameters are those of the best validation epoch. Epoch 0 in the
    history is the untrained network.
    """
    xs, ks, ys = (np.asarray(a, dtype=np.float64) for a in train_set)
    xv, kv, yv = (np.asarray(a, dtype=np.float64) for a in validation_set)
    if len(ys) == 0:
        raise SpecError("empty training set")
    params = init.copy() if init is not None else init_params(
        (xs.shape[1],) + tuple(config.hidden) + (2,), config.seed, config.slope, config.head_constraint
    )
    arrays = params.arrays()
    opt = Adam(arrays, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    rng = np.random.default_rng(config.seed + 1)

    def losses(epoch):
        net = params.with_arrays(arrays)
        try:
            tl = batch_loss(net, xs, ks, ys)
            vl = batch_loss(net, xv, kv, yv) if len(yv) else float("nan")
        except NumericError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}", epoch=epoch) from exc
        if not np.isfinite(tl):
            raise TrainingError(f"training loss diverged at epoch {epoch}", epoch=epoch)
        return tl, vl

    # overflow during divergence is reported below as a TrainingError
    with np.errstate(over="ignore", invalid="ignore"):
        tl, vl = losses(0)
        history = [(0, tl, vl)]
        best, best_epoch, best_val, stale = [a.copy() for a in arrays], 0, vl, 0
        n = len(ys)
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                grads = gradients(params.with_arrays(arrays), xs[idx], ks[idx], ys[idx])
                opt.step(arrays, grads)
            tl, vl = losses(epoch)
            history.append((epoch, tl, vl))
            if not len(yv):
                best, best_epoch = [a.copy() for a in arrays], epoch
                continue
            if vl < best_val:
                best, best_epoch, best_val, stale = [a.copy() for a in arrays], epoch, vl, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return TrainResult(params.with_arrays(best), history, best_epoch)


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, tl, vl in history:
            w.writerow([e, repr(float(tl)), repr(float(vl))])


def save_model(params: NetworkParams, path, registry_hash: str = "") -> None:
    """JSON manifest at ``path`` plus a little-endian f64 blob next to it (``.bin``)."""
    path = Path(path)
    blob = path.with_suffix(".bin")
    blob.write_bytes(b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays()))
    manifest = {
        "format": "wildfire-risk-model",
        "version": 1,
        "layer_dims": params.layer_dims,
        "activation": {"hidden": "leaky_relu", "slope": params.slope, "output": "linear"},
        "head_constraint": params.head_constraint,
        "registry_hash": registry_hash,
        "weights_file": blob.name,
        "layout": "layer-major; per layer W (fan_in x fan_out, row-major) then b",
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_model(path) -> tuple[NetworkParams, dict]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    dims = manifest["layer_dims"]
    data = np.frombuffer((path.parent / manifest["weights_file"]).read_bytes(), dtype="<f8")
    expected = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if data.size != expected:
        raise FormatError(f"weight blob holds {data.size} values, layer_dims need {expected}")
    arrays, at = [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        arrays.append(data[at:at + a * b].reshape(a, b).astype(np.float64))
        at += a * b
        arrays.append(data[at:at + b].astype(np.float64))
        at += b
    params = NetworkParams(arrays[0::2], arrays[1::2], manifest["activation"]["slope"], manifest["head_constraint"])
    return params, manifest


@dataclass
class ExplainMap:
    beta0: RasterGrid
    beta1: RasterGrid
    probability: RasterGrid | None = None


def explain(params: NetworkParams, layers: dict, registry: FeatureRegistry, kbdi: RasterGrid | None = None) -> ExplainMap:
    """Per-cell beta0/beta1 maps (and probability when a KBDI raster is given).

    Masked cells (water, missing channels) are NaN in every output.
    """
    if params.layer_dims[0] != registry.total_static:
        raise ShapeError(f"model takes {params.layer_dims[0]} features, registry has {registry.total_static}")
    cube, valid = feature_cube(layers, registry)
    template = layers["landcover"]
    b0 = np.full(template.shape, np.nan)
    b1 = np.full(template.shape, np.nan)
    x = normalize_static(cube[valid], registry)
    if len(x):
        b0[valid], b1[valid] = betas(params, x)
    out = ExplainMap(template.like(b0), template.like(b1))
    if kbdi is not None:
        check_same_geometry(template, kbdi)
        k = normalize_kbdi(kbdi.values)
        p = np.full(template.shape, np.nan)
        ok = valid & np.isfinite(k)
        p[ok] = logistic(b0[ok] + b1[ok] * k[ok])
        out.probability = template.like(p)
    return out
