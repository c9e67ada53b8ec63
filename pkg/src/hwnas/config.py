"""Experiment configuration: YAML parsing, categorical search spaces, and
decoding of parameter assignments into architecture specs.

The YAML schema (top-level keys study, dataset, space, objectives, hls,
local_search, runtime) is documented in the README. Unknown keys anywhere are
hard errors: a silent typo in a long search is far more expensive than a
strict parser.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from typing import Any, Optional

import numpy as np
import yaml

from hwnas.quantize import FixedPointFormat


class ConfigError(ValueError):
    """Malformed or invalid experiment configuration."""


class DecodeError(ValueError):
    """Parameter assignment cannot be decoded into an architecture."""


ACTIVATIONS = ("relu", "tanh", "sigmoid", "leaky_relu", "none")
OUTPUT_ACTIVATIONS = ("none-logits", "softmax")

# Accepts the spellings used in search-space tables (ReLU, LeakyReLU, None, ...).
_ACTIVATION_ALIASES = {
    "relu": "relu",
    "tanh": "tanh",
    "sigmoid": "sigmoid",
    "leakyrelu": "leaky_relu",
    "leaky_relu": "leaky_relu",
    "none": "none",
}


def _check_keys(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _require(mapping: dict, key: str, where: str) -> Any:
    if key not in mapping:
        raise ConfigError(f"missing required key '{key}' in {where}")
    return mapping[key]


@dataclass(frozen=True)
class ObjectiveSpec:
    metric: str
    direction: str  # maximize | minimize

    def __post_init__(self):
        if self.direction not in ("maximize", "minimize"):
            raise ConfigError(f"objective '{self.metric}': direction must be "
                              f"maximize or minimize, got {self.direction!r}")


@dataclass(frozen=True)
class ParamDomain:
    name: str
    choices: tuple
    # parameter is active only when `depends_on` takes a value in `when_values`
    depends_on: Optional[str] = None
    when_values: Optional[tuple] = None

    def __post_init__(self):
        if len(self.choices) == 0:
            raise ConfigError(f"parameter '{self.name}' has no choices")
        if len(set(self.choices)) != len(self.choices):
            raise ConfigError(f"parameter '{self.name}' has duplicate choices")
        if (self.depends_on is None) != (self.when_values is None):
            raise ConfigError(f"parameter '{self.name}': active_when needs "
                              "both param and values")

    @property
    def conditional(self) -> bool:
        return self.depends_on is not None


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[ParamDomain, ...]

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in search space")
        by_name = {p.name: p for p in self.params}
        for p in self.params:
            if p.depends_on is not None and p.depends_on not in by_name:
                raise ConfigError(f"parameter '{p.name}' depends on unknown "
                                  f"parameter '{p.depends_on}'")
        # cycle check + topological order over the dependency edges
        order: list[str] = []
        state: dict[str, int] = {}

        def visit(name: str) -> None:
            if state.get(name) == 1:
                raise ConfigError(f"conditional-rule cycle involving '{name}'")
            if state.get(name) == 2:
                return
            state[name] = 1
            dep = by_name[name].depends_on
            if dep is not None:
                visit(dep)
            state[name] = 2
            order.append(name)

        for p in self.params:
            visit(p.name)
        object.__setattr__(self, "_topo_order", tuple(order))
        object.__setattr__(self, "_by_name", by_name)

    @property
    def topo_order(self) -> tuple[str, ...]:
        return self._topo_order

    def domain(self, name: str) -> ParamDomain:
        return self._by_name[name]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def active_params(self, assignment: dict) -> list[str]:
        """Parameter names active under `assignment`, in declaration order."""
        active = []
        for name in self.topo_order:
            dom = self.domain(name)
            if dom.depends_on is None:
                active.append(name)
            elif dom.depends_on in assignment and \
                    assignment[dom.depends_on] in dom.when_values:
                active.append(name)
        return [n for n in self.names if n in set(active)]

    def digest(self) -> str:
        payload = [
            (p.name, list(p.choices), p.depends_on,
             list(p.when_values) if p.when_values else None)
            for p in self.params
        ]
        blob = json.dumps(payload, sort_keys=False, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        out = []
        for p in self.params:
            d: dict[str, Any] = {"name": p.name, "choices": list(p.choices)}
            if p.conditional:
                d["active_when"] = {"param": p.depends_on,
                                    "values": list(p.when_values)}
            out.append(d)
        return {"params": out}


@dataclass(frozen=True)
class WindowSpec:
    start: int
    size: int

    def __post_init__(self):
        if self.start < 0 or self.size < 1:
            raise ConfigError(f"invalid window ({self.start}, {self.size})")


@dataclass(frozen=True)
class HlsConfig:
    board: str = "VU13P"
    strategy: str = "latency"
    io_type: str = "parallel"
    reuse_factor: int = 1
    default_precision: FixedPointFormat = FixedPointFormat(16, 6)

    def __post_init__(self):
        if self.strategy not in ("latency", "resource"):
            raise ConfigError(f"hls strategy must be latency|resource, got "
                              f"{self.strategy!r}")
        if self.io_type not in ("parallel", "stream"):
            raise ConfigError(f"hls io_type must be parallel|stream, got "
                              f"{self.io_type!r}")
        if self.reuse_factor < 1:
            raise ConfigError("hls reuse_factor must be >= 1")

    def to_dict(self) -> dict:
        return {
            "board": self.board,
            "strategy": self.strategy,
            "io_type": self.io_type,
            "reuse_factor": self.reuse_factor,
            "default_precision": [self.default_precision.total_bits,
                                  self.default_precision.integer_bits],
        }


@dataclass(frozen=True)
class LocalSearchSchedule:
    qat_epochs: int = 5
    iterations: int = 10
    epochs_per_iteration: int = 10
    pruning_rate: float = 0.2
    precisions: tuple[FixedPointFormat, ...] = (
        FixedPointFormat(32, 16),
        FixedPointFormat(16, 6),
        FixedPointFormat(8, 3),
        FixedPointFormat(4, 1),
    )

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("local_search iterations must be >= 1")
        if not (0.0 < self.pruning_rate < 1.0):
            raise ConfigError("pruning_rate must be in (0, 1)")
        if len(self.precisions) == 0:
            raise ConfigError("local_search precisions must be non-empty")

    def to_dict(self) -> dict:
        return {
            "qat_epochs": self.qat_epochs,
            "iterations": self.iterations,
            "epochs_per_iteration": self.epochs_per_iteration,
            "pruning_rate": self.pruning_rate,
            "precisions": [[f.total_bits, f.integer_bits]
                           for f in self.precisions],
        }


@dataclass(frozen=True)
class SurrogateConfig:
    enabled: bool = True
    samples: int = 400
    epochs: int = 150

    def to_dict(self) -> dict:
        return {"enabled": self.enabled, "samples": self.samples,
                "epochs": self.epochs}


@dataclass(frozen=True)
class DatasetConfig:
    kind: str  # jet | qubit | csv
    n: int = 1000
    dims: int = 16
    classes: int = 5
    separation: float = 3.0
    series_length: int = 800
    informative_start: int = 200
    informative_size: int = 200
    snr: float = 2.0
    path: Optional[str] = None
    label_column: str = "label"
    has_header: bool = True

    def __post_init__(self):
        if self.kind not in ("jet", "qubit", "csv"):
            raise ConfigError(f"dataset kind must be jet|qubit|csv, got "
                              f"{self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("dataset kind csv requires 'path'")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "jet":
            out.update(n=self.n, dims=self.dims, classes=self.classes,
                       separation=self.separation)
        elif self.kind == "qubit":
            out.update(n=self.n, series_length=self.series_length,
                       informative_start=self.informative_start,
                       informative_size=self.informative_size, snr=self.snr)
        else:
            out.update(path=self.path, label_column=self.label_column,
                       has_header=self.has_header)
        return out


@dataclass(frozen=True)
class ArchitectureSpec:
    depth: int
    layer_widths: tuple[int, ...]
    activation: str = "relu"
    batch_norm: bool = False
    dropout_rate: float = 0.0
    l1_lambda: float = 0.0
    learning_rate: float = 1e-3
    window: Optional[WindowSpec] = None
    output_dim: int = 1
    output_activation: str = "none-logits"

    def __post_init__(self):
        if len(self.layer_widths) != self.depth:
            raise DecodeError(f"depth {self.depth} but "
                              f"{len(self.layer_widths)} widths")
        if any(w < 1 for w in self.layer_widths):
            raise DecodeError("all layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise DecodeError(f"unknown activation {self.activation!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise DecodeError("dropout_rate must be in [0, 1)")
        if self.l1_lambda < 0:
            raise DecodeError("l1_lambda must be >= 0")
        if self.learning_rate <= 0:
            raise DecodeError("learning_rate must be > 0")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise DecodeError(f"unknown output activation "
                              f"{self.output_activation!r}")
        if self.output_dim < 1:
            raise DecodeError("output_dim must be >= 1")

    def to_dict(self) -> dict:
        out = {
            "depth": self.depth,
            "layer_widths": list(self.layer_widths),
            "activation": self.activation,
            "batch_norm": self.batch_norm,
            "dropout_rate": self.dropout_rate,
            "l1_lambda": self.l1_lambda,
            "learning_rate": self.learning_rate,
            "output_dim": self.output_dim,
            "output_activation": self.output_activation,
        }
        if self.window is not None:
            out["window"] = {"start": self.window.start,
                             "size": self.window.size}
        return out

    @staticmethod
    def from_dict(d: dict) -> "ArchitectureSpec":
        w = d.get("window")
        return ArchitectureSpec(
            depth=d["depth"],
            layer_widths=tuple(d["layer_widths"]),
            activation=d.get("activation", "relu"),
            batch_norm=d.get("batch_norm", False),
            dropout_rate=d.get("dropout_rate", 0.0),
            l1_lambda=d.get("l1_lambda", 0.0),
            learning_rate=d.get("learning_rate", 1e-3),
            window=WindowSpec(w["start"], w["size"]) if w else None,
            output_dim=d.get("output_dim", 1),
            output_activation=d.get("output_activation", "none-logits"),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    study_name: str
    store_path: str
    dataset: DatasetConfig
    space: SearchSpace
    objectives: tuple[ObjectiveSpec, ...]
    trial_budget: int = 100
    population_size: int = 20
    epochs_per_trial: int = 5
    batch_size: int = 128
    k_folds: int = 1
    hls: HlsConfig = field(default_factory=HlsConfig)
    local_search: LocalSearchSchedule = field(default_factory=LocalSearchSchedule)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    seed: int = 0

    def __post_init__(self):
        if len(self.objectives) == 0:
            raise ConfigError("objectives must be non-empty")
        names = [o.metric for o in self.objectives]
        if len(set(names)) != len(names):
            raise ConfigError("objective metric names must be unique")
        if self.population_size > self.trial_budget:
            raise ConfigError(f"population_size {self.population_size} "
                              f"exceeds trial_budget {self.trial_budget}")
        if self.k_folds < 1:
            raise ConfigError("k_folds must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "study": {"name": self.study_name, "store": self.store_path,
                      "seed": self.seed},
            "dataset": self.dataset.to_dict(),
            "space": self.space.to_dict(),
            "objectives": [{"metric": o.metric, "direction": o.direction}
                           for o in self.objectives],
            "hls": self.hls.to_dict(),
            "local_search": self.local_search.to_dict(),
            "runtime": {
                "trial_budget": self.trial_budget,
                "population_size": self.population_size,
                "epochs_per_trial": self.epochs_per_trial,
                "batch_size": self.batch_size,
                "k_folds": self.k_folds,
                "surrogate": self.surrogate.to_dict(),
            },
        }

    def serialize(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _parse_space(raw: Any) -> SearchSpace:
    if not isinstance(raw, dict):
        raise ConfigError("'space' must be a mapping")
    _check_keys(raw, {"params"}, "space")
    params_raw = _require(raw, "params", "space")
    params = []
    for i, p in enumerate(params_raw):
        where = f"space.params[{i}]"
        _check_keys(p, {"name", "choices", "active_when"}, where)
        name = _require(p, "name", where)
        choices = _require(p, "choices", where)
        dep = None
        vals = None
        if "active_when" in p:
            aw = p["active_when"]
            _check_keys(aw, {"param", "values"}, f"{where}.active_when")
            dep = _require(aw, "param", f"{where}.active_when")
            vals = tuple(_require(aw, "values", f"{where}.active_when"))
        params.append(ParamDomain(name=name, choices=tuple(choices),
                                  depends_on=dep, when_values=vals))
    return SearchSpace(params=tuple(params))


def _parse_precision(raw: Any, where: str) -> FixedPointFormat:
    if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
        raise ConfigError(f"{where}: precision must be [total_bits, "
                          f"integer_bits], got {raw!r}")
    return FixedPointFormat(int(raw[0]), int(raw[1]))


def parse_config(yaml_text: str) -> ExperimentConfig:
    """Parse and validate a full experiment definition."""
    try:
        raw = yaml.safe_load(yaml_text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" at line {mark.line + 1}" if mark else ""
        raise ConfigError(f"malformed YAML{line}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level of the config must be a mapping")
    _check_keys(raw, {"study", "dataset", "space", "objectives", "hls",
                      "local_search", "runtime"}, "config")

    study = _require(raw, "study", "config")
    _check_keys(study, {"name", "store", "seed"}, "study")
    ds_raw = dict(_require(raw, "dataset", "config"))
    _check_keys(ds_raw, {"kind", "n", "dims", "classes", "separation",
                         "series_length", "informative_start",
                         "informative_size", "snr", "path", "label_column",
                         "has_header"}, "dataset")
    dataset = DatasetConfig(**ds_raw)
    space = _parse_space(_require(raw, "space", "config"))

    objectives = []
    for i, o in enumerate(_require(raw, "objectives", "config")):
        where = f"objectives[{i}]"
        _check_keys(o, {"metric", "direction"}, where)
        objectives.append(ObjectiveSpec(metric=_require(o, "metric", where),
                                        direction=_require(o, "direction", where)))

    hls_raw = dict(raw.get("hls", {}))
    _check_keys(hls_raw, {"board", "strategy", "io_type", "reuse_factor",
                          "default_precision"}, "hls")
    if "default_precision" in hls_raw:
        hls_raw["default_precision"] = _parse_precision(
            hls_raw["default_precision"], "hls.default_precision")
    hls = HlsConfig(**hls_raw)

    ls_raw = dict(raw.get("local_search", {}))
    _check_keys(ls_raw, {"qat_epochs", "iterations", "epochs_per_iteration",
                         "pruning_rate", "precisions"}, "local_search")
    if "precisions" in ls_raw:
        ls_raw["precisions"] = tuple(
            _parse_precision(p, f"local_search.precisions[{i}]")
            for i, p in enumerate(ls_raw["precisions"]))
    local_search = LocalSearchSchedule(**ls_raw)

    rt = dict(raw.get("runtime", {}))
    _check_keys(rt, {"trial_budget", "population_size", "epochs_per_trial",
                     "batch_size", "k_folds", "surrogate"}, "runtime")
    sg_raw = dict(rt.pop("surrogate", {}))
    _check_keys(sg_raw, {"enabled", "samples", "epochs"}, "runtime.surrogate")
    surrogate = SurrogateConfig(**sg_raw)

    return ExperimentConfig(
        study_name=_require(study, "name", "study"),
        store_path=_require(study, "store", "study"),
        seed=int(study.get("seed", 0)),
        dataset=dataset,
        space=space,
        objectives=tuple(objectives),
        hls=hls,
        local_search=local_search,
        surrogate=surrogate,
        **rt,
    )


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> dict:
    """Draw one assignment uniformly per active parameter.

    Conditional parameters are only sampled when their controlling parameter
    already took an enabling value; inactive parameters are omitted entirely
    so dead genes never enter the trial log.
    """
    assignment: dict[str, Any] = {}
    for name in space.topo_order:
        dom = space.domain(name)
        if dom.depends_on is not None:
            if dom.depends_on not in assignment:
                continue
            if assignment[dom.depends_on] not in dom.when_values:
                continue
        assignment[name] = dom.choices[int(rng.integers(len(dom.choices)))]
    return assignment


def _coerce_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        return value.strip().lower() not in ("none", "false", "0", "")
    return bool(value)


def decode_architecture(assignment: dict, space: SearchSpace,
                        output_dim: int = 1,
                        output_activation: str = "none-logits",
                        ) -> ArchitectureSpec:
    """Decode a sampled assignment into an ArchitectureSpec.

    Reserved parameter names: depth, width_1..width_K, activation,
    batch_norm, dropout_rate, l1_lambda, learning_rate, window_size,
    window_start. Anything else is carried by the trial record but ignored
    by the decoder.
    """
    active = set(space.active_params(assignment))
    missing = active - set(assignment)
    if missing:
        raise DecodeError(f"assignment missing active parameter(s) "
                          f"{sorted(missing)}")

    width_keys = sorted(
        (k for k in assignment if k.startswith("width_")),
        key=lambda k: int(k.split("_", 1)[1]))
    if "depth" in assignment:
        depth = int(assignment["depth"])
    elif width_keys:
        depth = len(width_keys)
    else:
        raise DecodeError("assignment has neither 'depth' nor width_* genes")

    widths = []
    for i in range(1, depth + 1):
        key = f"width_{i}"
        if key not in assignment:
            raise DecodeError(f"missing width gene '{key}' for depth {depth}")
        widths.append(int(assignment[key]))

    activation = "relu"
    if "activation" in assignment:
        key = str(assignment["activation"]).strip().lower()
        if key not in _ACTIVATION_ALIASES:
            raise DecodeError(f"unknown activation value "
                              f"{assignment['activation']!r}")
        activation = _ACTIVATION_ALIASES[key]

    window = None
    if "window_size" in assignment:
        window = WindowSpec(start=int(assignment.get("window_start", 0)),
                            size=int(assignment["window_size"]))

    return ArchitectureSpec(
        depth=depth,
        layer_widths=tuple(widths),
        activation=activation,
        batch_norm=_coerce_bool(assignment.get("batch_norm", False)),
        dropout_rate=float(assignment.get("dropout_rate", 0.0)),
        l1_lambda=float(assignment.get("l1_lambda", 0.0)),
        learning_rate=float(assignment.get("learning_rate", 1e-3)),
        window=window,
        output_dim=output_dim,
        output_activation=output_activation,
    )
