"""Analytic compute/hardware cost models and the trainable surrogate.

Three layers of estimation live here:
  * bit operations (BOPs) computed in closed form from layer shapes, bit
    widths, and per-layer density;
  * a deterministic analytical resource/latency oracle whose constants are
    versioned, declared values (a consistent in-repo ground truth, not a
    synthesis calibration);
  * per-target one-hidden-layer surrogate regressors trained on
    oracle-labeled architectures and used as the in-loop hardware objective.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import yaml

from hwnas.config import (ArchitectureSpec, HlsConfig, SearchSpace,
                          decode_architecture, sample_uniform)
from hwnas.quantize import FixedPointFormat

# analytic oracle constants (versioned, deliberately not Vivado-calibrated)
LUT_PER_MULT_BIT2 = 0.55
FF_PER_LUT = 0.4
DSP_BIT_THRESHOLD = 100   # use DSPs when b_w * b_a >= this
BRAM_BITS = 36864         # one 36Kb block
LAYER_PIPELINE_OVERHEAD = 4

RESOURCE_KINDS = ("lut", "ff", "dsp", "bram")
SURROGATE_TARGETS = ("lut", "ff", "dsp", "bram", "latency_cycles")
SURROGATE_VERSION = 1


@dataclass(frozen=True)
class BoardCapacity:
    name: str
    lut_total: int
    ff_total: int
    dsp_total: int
    bram_total: int

    def capacity(self, kind: str) -> int:
        return getattr(self, f"{kind}_total")


def _load_builtin_boards() -> dict:
    text = (importlib.resources.files("hwnas") / "boards.yaml").read_text()
    raw = yaml.safe_load(text)
    return {name: BoardCapacity(name=name, **caps)
            for name, caps in raw.items()}


_BOARDS = _load_builtin_boards()


def get_board(name: str) -> BoardCapacity:
    if name not in _BOARDS:
        raise KeyError(f"unknown board {name!r}; known: {sorted(_BOARDS)}")
    return _BOARDS[name]


def register_board(board: BoardCapacity) -> None:
    _BOARDS[board.name] = board


@dataclass
class ResourceEstimate:
    lut: float
    ff: float
    dsp: float
    bram: float
    latency_cycles: float
    initiation_interval: int
    lut_pct: float = 0.0
    ff_pct: float = 0.0
    dsp_pct: float = 0.0
    bram_pct: float = 0.0

    def fill_percentages(self, board: BoardCapacity) -> "ResourceEstimate":
        # stored unrounded; utilization_pct is the rounded reporting path
        for kind in RESOURCE_KINDS:
            setattr(self, f"{kind}_pct",
                    100.0 * getattr(self, kind) / board.capacity(kind))
        return self

    def to_dict(self) -> dict:
        return {
            "lut": self.lut, "ff": self.ff, "dsp": self.dsp,
            "bram": self.bram, "latency_cycles": self.latency_cycles,
            "initiation_interval": self.initiation_interval,
            "lut_pct": self.lut_pct, "ff_pct": self.ff_pct,
            "dsp_pct": self.dsp_pct, "bram_pct": self.bram_pct,
        }


def _layer_dims_from_spec(spec: ArchitectureSpec, input_dim: int
                          ) -> list[tuple[int, int]]:
    dims = [input_dim] + list(spec.layer_widths) + [spec.output_dim]
    return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def spec_input_dim(spec: ArchitectureSpec,
                   default: Optional[int] = None) -> int:
    if spec.window is not None:
        return 2 * spec.window.size
    if default is None:
        raise ValueError("spec has no window; input_dim must be supplied")
    return default


def bops_layer(n: int, m: int, b_w: int, b_a: int, density: float) -> float:
    """BOPs for one dense layer with fan-in n, fan-out m: partial-product
    bits of the surviving multipliers plus accumulator adder bits."""
    if n < 1 or m < 1 or b_w < 1 or b_a < 1:
        raise ValueError("dims and bit widths must be >= 1")
    if not (0.0 <= density <= 1.0):
        raise ValueError("density must be in [0, 1]")
    return m * n * (density * b_w * b_a + b_a + b_w + math.ceil(math.log2(n)))


def bops(spec: ArchitectureSpec, b_w: int, b_a: int,
         densities: Optional[list[float]] = None,
         input_dim: Optional[int] = None) -> float:
    """Total BOPs over all dense layers of the architecture."""
    dims = _layer_dims_from_spec(spec, spec_input_dim(spec, input_dim))
    if densities is None:
        densities = [1.0] * len(dims)
    if len(densities) != len(dims):
        raise ValueError("one density per layer required")
    return sum(bops_layer(n, m, b_w, b_a, d)
               for (n, m), d in zip(dims, densities))


def effective_bops(net, default_bits: tuple[int, int] = (32, 32)) -> float:
    """BOPs using the network's current per-layer mask density and, when a
    fixed-point format is attached, its bit width for weights and
    activations; float nets fall back to `default_bits`."""
    if net.quant is not None:
        b_w = b_a = net.quant.total_bits
    else:
        b_w, b_a = default_bits
    total = 0.0
    for layer in net.layers:
        density = float(layer.mask.sum()) / layer.mask.size
        total += bops_layer(layer.fan_in, layer.fan_out, b_w, b_a, density)
    return total


def analytic_estimate(spec: ArchitectureSpec, hls: HlsConfig,
                      densities: Optional[list[float]] = None,
                      input_dim: Optional[int] = None) -> ResourceEstimate:
    """Deterministic closed-form resource/latency oracle.

    Per layer with d*n*m surviving multipliers M: wide products
    (b_w*b_a >= 100) go to DSPs at ceil(M/R); narrow ones cost
    ceil(0.55*M*b_w*b_a/R) LUTs. The adder tree adds
    ceil(m*(n-1)*max(b_w,b_a)/R) LUTs. FF = ceil(0.4*LUT). BRAM is zero for
    fully parallel latency designs, else one 36Kb block per started
    36864 weight bits. Latency sums ceil(log2 n)+4 per layer plus
    (R-1)*depth; II = max(1, R).
    """
    dims = _layer_dims_from_spec(spec, spec_input_dim(spec, input_dim))
    if densities is None:
        densities = [1.0] * len(dims)
    b_w = b_a = hls.default_precision.total_bits
    R = hls.reuse_factor

    lut = 0
    dsp = 0
    latency = 0.0
    total_weight_bits = 0
    for (n, m), d in zip(dims, densities):
        mults = d * n * m
        if b_w * b_a >= DSP_BIT_THRESHOLD:
            dsp += math.ceil(mults / R)
        else:
            lut += math.ceil(LUT_PER_MULT_BIT2 * mults * b_w * b_a / R)
        lut += math.ceil(m * (n - 1) * max(b_w, b_a) / R)
        latency += math.ceil(math.log2(n)) + LAYER_PIPELINE_OVERHEAD
        total_weight_bits += n * m * b_w
    latency += (R - 1) * len(dims)
    ff = math.ceil(FF_PER_LUT * lut)
    if hls.strategy == "latency" and R == 1:
        bram = 0
    else:
        bram = math.ceil(total_weight_bits / BRAM_BITS)
    est = ResourceEstimate(lut=lut, ff=ff, dsp=dsp, bram=bram,
                           latency_cycles=latency,
                           initiation_interval=max(1, R))
    return est.fill_percentages(get_board(hls.board))


def utilization_pct(count: float, kind: str, board: BoardCapacity) -> float:
    """Percentage of the board's capacity, reported to 2 decimals."""
    if kind not in RESOURCE_KINDS:
        raise ValueError(f"unknown resource kind {kind!r}")
    return round(100.0 * count / board.capacity(kind), 2)


def mean_utilization(est: ResourceEstimate) -> float:
    """Arithmetic mean of the four (unrounded-then-reported) percentages."""
    return (est.lut_pct + est.ff_pct + est.dsp_pct + est.bram_pct) / 4.0


FEATURE_NAMES = ("depth", "total_params", "max_width", "mean_width",
                 "log2_total_mults", "weight_bits", "act_bits",
                 "reuse_factor", "strategy_latency", "input_dim",
                 "output_dim")


def featurize(spec: ArchitectureSpec, hls: HlsConfig,
              input_dim: Optional[int] = None) -> np.ndarray:
    """Deterministic feature vector for the surrogate (density-1 mults)."""
    in_dim = spec_input_dim(spec, input_dim)
    dims = _layer_dims_from_spec(spec, in_dim)
    total_mults = sum(n * m for n, m in dims)
    total_params = sum(n * m + m for n, m in dims)
    bits = hls.default_precision.total_bits
    return np.array([
        spec.depth,
        total_params,
        max(spec.layer_widths),
        float(np.mean(spec.layer_widths)),
        math.log2(total_mults),
        bits,
        bits,
        hls.reuse_factor,
        1.0 if hls.strategy == "latency" else 0.0,
        in_dim,
        spec.output_dim,
    ], dtype=np.float64)


@dataclass
class SurrogateModel:
    """Five independent one-hidden-layer regressors on log1p targets."""
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    regressors: dict          # target -> nn snapshot (or {"constant": c})
    board: str
    hidden: int = 48
    version: int = SURROGATE_VERSION


def _make_regressor(n_features: int, hidden: int, seed: int):
    from hwnas.config import ArchitectureSpec as _Spec
    from hwnas.nn import build
    reg_spec = _Spec(depth=1, layer_widths=(hidden,), activation="relu",
                     output_dim=1)
    net = build(reg_spec, n_features, 1, seed)
    net.loss_kind = "mse"
    return net


def train_surrogate(samples: list[tuple[np.ndarray, ResourceEstimate]],
                    board: str, seed: int = 0, hidden: int = 48,
                    epochs: int = 150) -> SurrogateModel:
    """Fit one regressor per target on log1p-scaled oracle labels.

    Constant targets (e.g. BRAM always zero for latency designs) collapse
    that regressor to a constant predictor; that is documented behavior,
    not an error.
    """
    from hwnas.nn import Adam, _flatten_grads, _param_refs, loss_and_gradients

    if len(samples) < 2:
        raise ValueError("need at least 2 training samples")
    feats = np.stack([f for f, _ in samples])
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    scale = np.where(std > 0, 1.0 / np.where(std > 0, std, 1.0), 0.0)
    x = (feats - mean) * scale

    regressors = {}
    for ti, target in enumerate(SURROGATE_TARGETS):
        raw = np.array([getattr(est, target) for _, est in samples])
        y = np.log1p(raw)[:, None]
        if np.all(raw == raw[0]):
            regressors[target] = {"constant": float(raw[0])}
            continue
        net = _make_regressor(x.shape[1], hidden, seed + 31 * ti)
        opt = Adam(lr=0.01)
        refs = _param_refs(net)
        rng = np.random.default_rng(seed + 977 * ti)
        for _ in range(epochs):
            perm = rng.permutation(x.shape[0])
            for lo in range(0, x.shape[0], 256):
                idx = perm[lo:lo + 256]
                _, grads = loss_and_gradients(net, x[idx], y[idx],
                                              train=True)
                opt.step(refs, _flatten_grads(net, grads))
        from hwnas.nn import snapshot
        regressors[target] = {"snapshot": snapshot(net),
                              "n_features": x.shape[1]}
    return SurrogateModel(feature_mean=mean, feature_scale=scale,
                          regressors=regressors, board=board, hidden=hidden)


def predict(model: SurrogateModel, features: np.ndarray) -> ResourceEstimate:
    """Non-negative resource estimate from the surrogate; latency may be
    fractional (it is a regressor output, not a cycle count)."""
    from hwnas.config import ArchitectureSpec as _Spec
    from hwnas.nn import forward, restore

    x = ((np.asarray(features, dtype=np.float64) - model.feature_mean)
         * model.feature_scale)[None, :]
    values = {}
    for target in SURROGATE_TARGETS:
        reg = model.regressors[target]
        if "constant" in reg:
            values[target] = reg["constant"]
            continue
        net = _make_regressor(len(model.feature_mean), model.hidden, 0)
        restore(net, reg["snapshot"])
        pred = float(forward(net, x, mode="eval")[0, 0])
        values[target] = max(0.0, float(np.expm1(pred)))
    est = ResourceEstimate(lut=values["lut"], ff=values["ff"],
                           dsp=values["dsp"], bram=values["bram"],
                           latency_cycles=values["latency_cycles"],
                           initiation_interval=1)
    return est.fill_percentages(get_board(model.board))


def oracle_labeled_samples(space: SearchSpace, hls: HlsConfig,
                           n_samples: int, seed: int,
                           input_dim: Optional[int] = None,
                           output_dim: int = 1,
                           ) -> list[tuple[np.ndarray, ResourceEstimate]]:
    """Sample architectures from the space and label them with the oracle."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n_samples):
        assignment = sample_uniform(space, rng)
        spec = decode_architecture(assignment, space, output_dim=output_dim)
        in_dim = spec_input_dim(spec, input_dim)
        est = analytic_estimate(spec, hls, input_dim=in_dim)
        samples.append((featurize(spec, hls, in_dim), est))
    return samples
