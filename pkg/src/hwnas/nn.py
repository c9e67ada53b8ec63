"""Small MLP engine: construction, forward/backward, Adam training,
evaluation, and bit-exact weight snapshots.

Everything runs in float64 numpy for deterministic, finite-difference-
checkable gradients. Pruning masks are honored everywhere a weight is read
(effective weight = weight * mask) and masked gradients are zeroed, so a
pruned entry can never be resurrected by the optimizer. When a fixed-point
format is attached, effective weights, biases, and hidden post-activation
values are fake-quantized on read and gradients flow through a
straight-through estimator that passes inside the representable range and
blocks where saturation clipped.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hwnas.config import ArchitectureSpec
from hwnas.datasets import DatasetTable, FoldPlan
from hwnas.quantize import FixedPointFormat, in_range, quantize_array

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LEAKY_SLOPE = 0.01

SNAPSHOT_VERSION = 1


class TrialFailure(RuntimeError):
    """Non-finite loss or output; the trial is failed, not the study."""


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class DenseLayer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray     # (fan_out,)
    mask: np.ndarray     # same shape as weights, {0, 1}
    activation: str      # relu | tanh | sigmoid | leaky_relu | none
    bn: Optional[BatchNorm] = None

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]


@dataclass
class Network:
    layers: list[DenseLayer]
    dropout_rate: float = 0.0
    l1_lambda: float = 0.0
    loss_kind: str = "softmax-cross-entropy"
    quant: Optional[FixedPointFormat] = None

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    final_metric: float = 0.0
    fold_metrics: list[float] = field(default_factory=list)


def build(spec: ArchitectureSpec, input_dim: int, output_dim: int,
          seed: int) -> Network:
    """Materialize a trainable network from an architecture spec.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)); biases start at
    zero; masks start all-ones. Deterministic per seed.
    """
    if input_dim < 1 or output_dim < 1:
        raise ValueError("input_dim and output_dim must be >= 1")
    rng = np.random.default_rng(seed)
    dims = [input_dim] + list(spec.layer_widths) + [output_dim]
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        hidden = i < len(dims) - 2
        layers.append(DenseLayer(
            weights=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
            bias=np.zeros(fan_out),
            mask=np.ones((fan_in, fan_out)),
            activation=spec.activation if hidden else "none",
            bn=BatchNorm(np.ones(fan_out), np.zeros(fan_out),
                         np.zeros(fan_out), np.ones(fan_out))
            if (hidden and spec.batch_norm) else None,
        ))
    loss = ("binary-cross-entropy" if output_dim == 1
            else "softmax-cross-entropy")
    return Network(layers=layers, dropout_rate=spec.dropout_rate,
                   l1_lambda=spec.l1_lambda, loss_kind=loss)


def _activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(0.0, x)
    if kind == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if kind == "none":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def _activate_grad(pre: np.ndarray, post: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(pre > 0, 1.0, LEAKY_SLOPE)
    if kind == "tanh":
        return 1.0 - post * post
    if kind == "sigmoid":
        return post * (1.0 - post)
    if kind == "none":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {kind!r}")


def _effective_params(layer: DenseLayer, quant):
    """(weights-as-read, bias-as-read, STE mask for weights, for bias)."""
    w_m = layer.weights * layer.mask
    b_m = layer.bias
    if quant is None:
        return w_m, b_m, None, None
    return (quantize_array(w_m, quant), quantize_array(b_m, quant),
            in_range(w_m, quant).astype(np.float64),
            in_range(b_m, quant).astype(np.float64))


def _forward(net: Network, x: np.ndarray, train: bool,
             drop_rng: Optional[np.random.Generator] = None,
             update_stats: bool = False):
    """Full forward pass; returns (logits, per-layer caches)."""
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"batch dim {x.shape} does not match input "
                         f"dim {net.input_dim}")
    caches = []
    out = np.asarray(x, dtype=np.float64)
    n_layers = len(net.layers)
    for li, layer in enumerate(net.layers):
        hidden = li < n_layers - 1
        w_used, b_used, ste_w, ste_b = _effective_params(layer, net.quant)
        x_in = out
        pre = x_in @ w_used + b_used

        cache = {"x_in": x_in, "w_used": w_used, "ste_w": ste_w,
                 "ste_b": ste_b, "pre": pre}
        bn_out = pre
        if layer.bn is not None:
            bn = layer.bn
            if train:
                mu = pre.mean(axis=0)
                var = pre.var(axis=0)
                if update_stats:
                    bn.running_mean = (BN_MOMENTUM * bn.running_mean
                                       + (1 - BN_MOMENTUM) * mu)
                    bn.running_var = (BN_MOMENTUM * bn.running_var
                                      + (1 - BN_MOMENTUM) * var)
            else:
                mu, var = bn.running_mean, bn.running_var
            ivar = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (pre - mu) * ivar
            bn_out = bn.gamma * xhat + bn.beta
            cache.update(bn_mu=mu, bn_ivar=ivar, bn_xhat=xhat,
                         bn_train=train)
        cache["bn_out"] = bn_out

        act = _activate(bn_out, layer.activation)
        cache["act"] = act
        out = act
        if hidden and net.quant is not None:
            out = quantize_array(act, net.quant)
            cache["ste_act"] = in_range(act, net.quant).astype(np.float64)

        if hidden and train and net.dropout_rate > 0 and drop_rng is not None:
            keep = (drop_rng.random(out.shape)
                    >= net.dropout_rate).astype(np.float64)
            scale = keep / (1.0 - net.dropout_rate)
            out = out * scale
            cache["drop_scale"] = scale
        caches.append(cache)
    return out, caches


def forward(net: Network, batch: np.ndarray, mode: str = "eval",
            drop_rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Logits for a batch; dropout only fires in train mode with an rng."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be train|eval")
    logits, _ = _forward(net, batch, train=(mode == "train"),
                         drop_rng=drop_rng if mode == "train" else None)
    return logits


def _loss_and_dlogits(net: Network, logits: np.ndarray, targets: np.ndarray):
    n = logits.shape[0]
    if net.loss_kind == "softmax-cross-entropy":
        y = np.asarray(targets, dtype=np.int64)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expv = np.exp(shifted)
        probs = expv / expv.sum(axis=1, keepdims=True)
        loss = -np.mean(np.log(probs[np.arange(n), y] + 1e-300))
        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= 1.0
        return loss, dlogits / n
    if net.loss_kind == "binary-cross-entropy":
        y = np.asarray(targets, dtype=np.float64).reshape(n, 1)
        z = logits
        # numerically stable log(1 + e^-|z|) formulation
        loss = np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))
        s = 1.0 / (1.0 + np.exp(-z))
        return loss, (s - y) / z.size
    if net.loss_kind == "mse":
        y = np.asarray(targets, dtype=np.float64).reshape(logits.shape)
        diff = logits - y
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    raise ValueError(f"unknown loss kind {net.loss_kind!r}")


def _l1_penalty(net: Network) -> float:
    if net.l1_lambda == 0:
        return 0.0
    return net.l1_lambda * sum(
        np.abs(layer.weights * layer.mask).sum() for layer in net.layers)


def _backward(net: Network, caches, dlogits: np.ndarray):
    grads = []
    d = dlogits
    n_layers = len(net.layers)
    for li in range(n_layers - 1, -1, -1):
        layer = net.layers[li]
        cache = caches[li]

        if "drop_scale" in cache:
            d = d * cache["drop_scale"]
        if "ste_act" in cache:
            d = d * cache["ste_act"]
        d = d * _activate_grad(cache["bn_out"], cache["act"],
                               layer.activation)

        g = {"gamma": None, "beta": None}
        if layer.bn is not None:
            xhat, ivar = cache["bn_xhat"], cache["bn_ivar"]
            g["gamma"] = (d * xhat).sum(axis=0)
            g["beta"] = d.sum(axis=0)
            dxhat = d * layer.bn.gamma
            if cache["bn_train"]:
                B = d.shape[0]
                d = (ivar / B) * (B * dxhat - dxhat.sum(axis=0)
                                  - xhat * (dxhat * xhat).sum(axis=0))
            else:
                d = dxhat * ivar

        dw = cache["x_in"].T @ d
        db = d.sum(axis=0)
        if cache["ste_w"] is not None:
            dw = dw * cache["ste_w"]
            db = db * cache["ste_b"]
        dw = dw * layer.mask
        if net.l1_lambda:
            dw = dw + net.l1_lambda * np.sign(layer.weights) * layer.mask
        g["weights"] = dw
        g["bias"] = db
        grads.append(g)
        d = d @ cache["w_used"].T
    grads.reverse()
    return grads


def loss_and_gradients(net: Network, batch: np.ndarray, targets: np.ndarray,
                       train: bool = True,
                       drop_rng: Optional[np.random.Generator] = None,
                       update_stats: bool = False):
    """One combined forward/backward pass. Pure unless update_stats."""
    logits, caches = _forward(net, batch, train=train, drop_rng=drop_rng,
                              update_stats=update_stats)
    data_loss, dlogits = _loss_and_dlogits(net, logits, targets)
    loss = data_loss + _l1_penalty(net)
    grads = _backward(net, caches, dlogits)
    return loss, grads


def gradients(net: Network, batch: np.ndarray, targets: np.ndarray):
    """Verification surface: gradients in train mode, dropout off, no
    running-stat side effects."""
    _, grads = loss_and_gradients(net, batch, targets, train=True,
                                  drop_rng=None, update_stats=False)
    return grads


class Adam:
    """Standard Adam (b1=0.9, b2=0.999, eps=1e-8), fresh state per trainer."""

    def __init__(self, lr: float):
        self.lr = lr
        self.b1, self.b2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: list[tuple], grads: list[np.ndarray]) -> None:
        self.t += 1
        for key, (holder, attr) in enumerate(params):
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            self.m[key] = self.b1 * self.m[key] + (1 - self.b1) * g
            self.v[key] = self.b2 * self.v[key] + (1 - self.b2) * g * g
            mhat = self.m[key] / (1 - self.b1 ** self.t)
            vhat = self.v[key] / (1 - self.b2 ** self.t)
            cur = getattr(holder, attr)
            setattr(holder, attr,
                    cur - self.lr * mhat / (np.sqrt(vhat) + self.eps))


def _param_refs(net: Network):
    refs = []
    for layer in net.layers:
        refs.append((layer, "weights"))
        refs.append((layer, "bias"))
        if layer.bn is not None:
            refs.append((layer.bn, "gamma"))
            refs.append((layer.bn, "beta"))
    return refs


def _flatten_grads(net: Network, grads) -> list[np.ndarray]:
    flat = []
    for layer, g in zip(net.layers, grads):
        flat.append(g["weights"])
        flat.append(g["bias"])
        if layer.bn is not None:
            flat.append(g["gamma"])
            flat.append(g["beta"])
    return flat


def _train_single(net: Network, x: np.ndarray, y: np.ndarray,
                  cfg: TrainConfig) -> list[float]:
    rng = np.random.default_rng(cfg.seed)
    drop_rng = np.random.default_rng(cfg.seed + 0x5EED)
    opt = Adam(cfg.learning_rate)
    refs = _param_refs(net)
    losses = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(x.shape[0])
        epoch_loss = 0.0
        batches = 0
        for lo in range(0, x.shape[0], cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            loss, grads = loss_and_gradients(
                net, x[idx], y[idx], train=True,
                drop_rng=drop_rng if net.dropout_rate > 0 else None,
                update_stats=True)
            if not np.isfinite(loss):
                raise TrialFailure(f"non-finite loss {loss!r} during training")
            opt.step(refs, _flatten_grads(net, grads))
            for layer in net.layers:
                layer.weights *= layer.mask  # mask-freeze safety net
            epoch_loss += loss
            batches += 1
        losses.append(epoch_loss / max(batches, 1))
    return losses


def evaluate(net: Network, data: DatasetTable,
             metric: str = "accuracy") -> float:
    """Fraction of correct predictions (binary: logit > 0; else argmax).
    `fidelity` is the same computation under its domain name."""
    if metric not in ("accuracy", "fidelity"):
        raise ValueError(f"unknown metric {metric!r}")
    logits = forward(net, data.features, mode="eval")
    if net.output_dim == 1:
        pred = (logits[:, 0] > 0).astype(np.int64)
    else:
        pred = logits.argmax(axis=1)
    return float(np.mean(pred == data.labels))


def train_epochs(net: Network, data: DatasetTable,
                 folds: Optional[FoldPlan], cfg: TrainConfig,
                 metric: str = "accuracy") -> TrainReport:
    """Train in place; with a fold plan, each fold restarts from the net's
    pre-training state and the reported metric is the fold mean."""
    if data.n_samples == 0:
        raise ValueError("empty dataset")
    report = TrainReport()
    if folds is None or folds.k == 1:
        report.epoch_losses = _train_single(net, data.features, data.labels,
                                            cfg)
        report.final_metric = evaluate(net, data, metric)
        report.fold_metrics = [report.final_metric]
        return report

    init = snapshot(net)
    for f in range(folds.k):
        restore(net, init)
        train_idx, val_idx = folds.train_val_indices(f)
        fold_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                               learning_rate=cfg.learning_rate,
                               seed=cfg.seed + 1009 * f)
        losses = _train_single(net, data.features[train_idx],
                               data.labels[train_idx], fold_cfg)
        if f == 0:
            report.epoch_losses = losses
        report.fold_metrics.append(evaluate(net, data.subset(val_idx),
                                            metric))
    report.final_metric = float(np.mean(report.fold_metrics))
    return report


def snapshot(net: Network) -> dict:
    """Value-independent copy of all trainable parameters and BN stats.
    Masks are deliberately excluded (compression owns them)."""
    layers = []
    for layer in net.layers:
        entry = {"weights": layer.weights.copy(), "bias": layer.bias.copy()}
        if layer.bn is not None:
            entry["gamma"] = layer.bn.gamma.copy()
            entry["beta"] = layer.bn.beta.copy()
            entry["running_mean"] = layer.bn.running_mean.copy()
            entry["running_var"] = layer.bn.running_var.copy()
        layers.append(entry)
    return {"version": SNAPSHOT_VERSION, "layers": layers}


def restore(net: Network, snap: dict) -> None:
    if len(snap["layers"]) != len(net.layers):
        raise ValueError("snapshot layer count mismatch")
    for layer, entry in zip(net.layers, snap["layers"]):
        if entry["weights"].shape != layer.weights.shape:
            raise ValueError("snapshot shape mismatch")
        layer.weights = entry["weights"].copy()
        layer.bias = entry["bias"].copy()
        if layer.bn is not None:
            layer.bn.gamma = entry["gamma"].copy()
            layer.bn.beta = entry["beta"].copy()
            layer.bn.running_mean = entry["running_mean"].copy()
            layer.bn.running_var = entry["running_var"].copy()


def clone(net: Network) -> Network:
    return copy.deepcopy(net)


def save_snapshot(snap: dict, path: str, masks=None) -> None:
    """JSON snapshot container; float lists round-trip bit-exactly through
    Python's shortest-repr serialization."""
    payload = {"version": snap["version"], "layers": []}
    for entry in snap["layers"]:
        payload["layers"].append({k: v.tolist() for k, v in entry.items()})
    if masks is not None:
        payload["masks"] = [m.tolist() for m in masks]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_snapshot(path: str):
    """Returns (snapshot, masks-or-None)."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version "
                         f"{payload.get('version')!r}")
    snap = {"version": payload["version"], "layers": []}
    for entry in payload["layers"]:
        snap["layers"].append({k: np.asarray(v, dtype=np.float64)
                               for k, v in entry.items()})
    masks = None
    if "masks" in payload:
        masks = [np.asarray(m, dtype=np.float64) for m in payload["masks"]]
    return snap, masks
