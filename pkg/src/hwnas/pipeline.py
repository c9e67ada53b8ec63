"""End-to-end drivers tying config, datasets, training, cost models, search,
and the store together. The CLI is a thin shell over this module.

Per-trial flow in global search: decode the sampled assignment, extract the
readout window when one is searched, run (optionally k-fold) training with
train-split-only normalization, compute BOPs, featurize, score hardware via
the surrogate (or the analytic oracle when the surrogate is disabled), and
assemble the objective vector strictly in the study's declared order.
"""

from __future__ import annotations

import zlib
from typing import Optional

import numpy as np

from hwnas import costs, datasets, nsga2, store
from hwnas.config import (ArchitectureSpec, ExperimentConfig, WindowSpec,
                          decode_architecture)
from hwnas.nn import TrainConfig, TrialFailure, build, evaluate, train_epochs

METRIC_NAMES = ("accuracy", "fidelity", "bops", "mean_utilization",
                "latency_cycles")


def make_dataset(cfg: ExperimentConfig) -> datasets.DatasetTable:
    ds = cfg.dataset
    if ds.kind == "jet":
        return datasets.gen_jet_like(ds.n, ds.dims, ds.classes,
                                     ds.separation, seed=cfg.seed)
    if ds.kind == "qubit":
        informative = WindowSpec(ds.informative_start, ds.informative_size)
        return datasets.gen_iq_readout(ds.n, ds.series_length, informative,
                                       ds.snr, seed=cfg.seed)
    table = datasets.load_csv(ds.path, ds.label_column, ds.has_header)
    if ds.series_length and table.n_features == 2 * ds.series_length:
        table = datasets.DatasetTable(table.features, table.labels,
                                      table.class_count,
                                      series_length=ds.series_length)
    return table


def study_meta(cfg: ExperimentConfig) -> store.StudyMeta:
    return store.StudyMeta(
        study_name=cfg.study_name,
        objectives=tuple((o.metric, o.direction) for o in cfg.objectives),
        space_digest=cfg.space.digest(),
        param_names=cfg.space.names,
    )


def trial_seed(study_seed: int, trial_id: int) -> int:
    # stable across workers regardless of interleaving
    return int(zlib.crc32(f"{study_seed}:{trial_id}".encode()))


def clamp_window(w: WindowSpec, series_length: int) -> WindowSpec:
    """Independently sampled window genes may overrun the series; clamp the
    size so every sampled combination stays evaluable."""
    size = min(w.size, series_length - w.start)
    return WindowSpec(w.start, size)


def prepare_trial_table(spec: ArchitectureSpec,
                        table: datasets.DatasetTable):
    """(possibly windowed table, effective window) for one trial."""
    if spec.window is not None and table.series_length is not None:
        w = clamp_window(spec.window, table.series_length)
        return datasets.extract_window(table, w), w
    return table, None


def train_and_score(spec: ArchitectureSpec, table: datasets.DatasetTable,
                    cfg: ExperimentConfig, seed: int):
    """Mean validation metric over folds with leakage-safe normalization.
    Returns (metric, trained net from the last fold)."""
    folds = datasets.stratified_kfold(table.labels, cfg.k_folds, seed)
    metrics = []
    net = None
    for f in range(folds.k):
        train_idx, val_idx = folds.train_val_indices(f)
        norm = datasets.fit_normalizer(table.features[train_idx])
        normalized = norm.apply_table(table)
        net = build(spec, table.n_features, spec.output_dim,
                    seed=seed + 31 * f)
        tc = TrainConfig(epochs=cfg.epochs_per_trial,
                         batch_size=cfg.batch_size,
                         learning_rate=spec.learning_rate,
                         seed=seed + 31 * f)
        train_epochs(net, normalized.subset(train_idx), None, tc)
        metrics.append(evaluate(net, normalized.subset(val_idx)))
    return float(np.mean(metrics)), net


def build_surrogate(cfg: ExperimentConfig,
                    input_dim: int) -> Optional[costs.SurrogateModel]:
    """Deterministic per-study surrogate trained on oracle-labeled samples
    from the configured space; every worker derives the identical model."""
    if not cfg.surrogate.enabled:
        return None
    samples = costs.oracle_labeled_samples(
        cfg.space, cfg.hls, cfg.surrogate.samples, seed=cfg.seed,
        input_dim=input_dim, output_dim=_output_dim(cfg))
    return costs.train_surrogate(samples, board=cfg.hls.board,
                                 seed=cfg.seed,
                                 epochs=cfg.surrogate.epochs)


def _output_dim(cfg: ExperimentConfig) -> int:
    if cfg.dataset.kind == "jet":
        return cfg.dataset.classes
    if cfg.dataset.kind == "qubit":
        return 1
    return None or 1  # csv: resolved from the loaded table by callers


def make_evaluator(cfg: ExperimentConfig, table: datasets.DatasetTable,
                   surrogate: Optional[costs.SurrogateModel]):
    output_dim = table.class_count if table.class_count > 2 else 1
    output_act = "softmax" if output_dim > 1 else "none-logits"
    b = cfg.hls.default_precision.total_bits

    def evaluator(assignment: dict, trial_id: int):
        seed = trial_seed(cfg.seed, trial_id)
        spec = decode_architecture(assignment, cfg.space,
                                   output_dim=output_dim,
                                   output_activation=output_act)
        trial_table, window = prepare_trial_table(spec, table)
        try:
            metric, _ = train_and_score(spec, trial_table, cfg, seed)
        except datasets.DatasetError as exc:
            raise TrialFailure(str(exc)) from exc

        input_dim = trial_table.n_features
        bops_val = costs.bops(spec, b, b, input_dim=input_dim)
        feats = costs.featurize(spec, cfg.hls, input_dim)
        if surrogate is not None:
            est = costs.predict(surrogate, feats)
        else:
            est = costs.analytic_estimate(spec, cfg.hls, input_dim=input_dim)
        util = costs.mean_utilization(est)

        metric_values = {
            "accuracy": metric,
            "fidelity": metric,
            "bops": bops_val,
            "mean_utilization": util,
            "latency_cycles": est.latency_cycles,
        }
        try:
            values = [metric_values[o.metric] for o in cfg.objectives]
        except KeyError as exc:
            raise TrialFailure(f"unknown objective metric {exc}") from exc
        aux = {
            "task_metric": metric,
            "bops": bops_val,
            "mean_utilization": util,
            "latency_cycles": est.latency_cycles,
            "lut_pct": est.lut_pct, "ff_pct": est.ff_pct,
            "dsp_pct": est.dsp_pct, "bram_pct": est.bram_pct,
        }
        if window is not None:
            aux["window_start"] = window.start
            aux["window_size"] = window.size
        return values, aux

    return evaluator


def open_study(cfg: ExperimentConfig,
               store_path: Optional[str] = None) -> store.StudyHandle:
    return store.open_or_create(store_path or cfg.store_path,
                                study_meta(cfg))


def run_global_search(cfg: ExperimentConfig, worker_id: str = "w0",
                      worker_quota: Optional[int] = None,
                      store_path: Optional[str] = None):
    """One worker's share of the global search; returns (handle, archive)."""
    table = make_dataset(cfg)
    surrogate = build_surrogate(cfg, input_dim=table.n_features)
    handle = open_study(cfg, store_path)
    evaluator = make_evaluator(cfg, table, surrogate)
    archive = nsga2.evolve(
        handle, evaluator, cfg.space, cfg.objectives,
        nsga2.EvolveConfig(population_size=cfg.population_size,
                           trial_budget=cfg.trial_budget, seed=cfg.seed),
        worker_id=worker_id, worker_quota=worker_quota)
    return handle, archive


def checkpoint_payload(cfg: ExperimentConfig, trial) -> dict:
    """Local-search-ready YAML payload for a selected trial."""
    return {
        "study": cfg.study_name,
        "space_digest": cfg.space.digest(),
        "trial_id": trial.trial_id,
        "params": dict(trial.params),
        "objectives": {m: v for (m, _), v in
                       zip([(o.metric, o.direction) for o in cfg.objectives],
                           trial.objectives)},
        "aux": dict(trial.aux),
    }


def run_local_search(cfg: ExperimentConfig, checkpoint: dict):
    """Rebuild + retrain the checkpoint's architecture as the float seed,
    then run the compression schedule. Returns (results, spec, seed_net)."""
    from hwnas import compression

    if checkpoint.get("space_digest") not in (None, cfg.space.digest()):
        raise ValueError("checkpoint was selected under a different "
                         "search space")
    table = make_dataset(cfg)
    output_dim = table.class_count if table.class_count > 2 else 1
    spec = decode_architecture(checkpoint["params"], cfg.space,
                               output_dim=output_dim,
                               output_activation="softmax"
                               if output_dim > 1 else "none-logits")
    trial_table, _ = prepare_trial_table(spec, table)
    seed = trial_seed(cfg.seed, int(checkpoint["trial_id"]))

    norm = datasets.fit_normalizer(trial_table.features)
    normalized = norm.apply_table(trial_table)
    seed_net = build(spec, normalized.n_features, spec.output_dim, seed)
    tc = TrainConfig(epochs=cfg.epochs_per_trial, batch_size=cfg.batch_size,
                     learning_rate=spec.learning_rate, seed=seed)
    train_epochs(seed_net, normalized, None, tc)

    folds = (datasets.stratified_kfold(normalized.labels, cfg.k_folds, seed)
             if cfg.k_folds > 1 else None)
    results = compression.local_search(
        seed_net, cfg.local_search, normalized, folds,
        batch_size=cfg.batch_size, learning_rate=spec.learning_rate,
        seed=seed)
    return results, spec, seed_net, normalized


def export_front_csv(handle: store.StudyHandle, specs, path: str,
                     axes: tuple[str, str]) -> None:
    """CSV of (x, y, rank) for every COMPLETE trial."""
    rows = _front_rows(handle, specs, axes)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"trial_id,{axes[0]},{axes[1]},rank\n")
        for tid, x, y, rank in rows:
            fh.write(f"{tid},{x!r},{y!r},{rank}\n")


def _axis_value(trial, name: str, specs) -> float:
    for i, s in enumerate(specs):
        if s.metric == name:
            return trial.objectives[i]
    if name in trial.aux:
        return float(trial.aux[name])
    raise KeyError(f"axis {name!r} is neither an objective nor an aux "
                   f"column")


def _front_rows(handle, specs, axes):
    complete = handle.list_trials(state="COMPLETE")
    rows = []
    if not complete:
        return rows
    fronts = nsga2.nondominated_sort([t.objectives for t in complete],
                                     tuple(specs))
    rank_of = {}
    for rank, front in enumerate(fronts):
        for i in front:
            rank_of[i] = rank
    for i, t in enumerate(complete):
        rows.append((t.trial_id, _axis_value(t, axes[0], specs),
                     _axis_value(t, axes[1], specs), rank_of.get(i, -1)))
    return rows


def export_front_svg(handle: store.StudyHandle, specs, path: str,
                     axes: tuple[str, str]) -> None:
    """Dependency-free scatter plot; rank-0 points drawn distinct."""
    rows = _front_rows(handle, specs, axes)
    width, height, margin = 640, 480, 60
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if rows:
        xs = [r[1] for r in rows]
        ys = [r[2] for r in rows]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        xr = (x1 - x0) or 1.0
        yr = (y1 - y0) or 1.0

        def sx(v):
            return margin + (v - x0) / xr * (width - 2 * margin)

        def sy(v):
            return height - margin - (v - y0) / yr * (height - 2 * margin)

        for tid, x, y, rank in rows:
            color = "#d62728" if rank == 0 else "#1f77b4"
            r = 5 if rank == 0 else 3
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" '
                         f'r="{r}" fill="{color}" data-trial="{tid}" '
                         f'data-rank="{rank}"/>')
    parts.append(f'<text x="{width // 2}" y="{height - 15}" '
                 f'text-anchor="middle" font-size="14">{axes[0]}</text>')
    parts.append(f'<text x="15" y="{height // 2}" font-size="14" '
                 f'transform="rotate(-90 15 {height // 2})" '
                 f'text-anchor="middle">{axes[1]}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
