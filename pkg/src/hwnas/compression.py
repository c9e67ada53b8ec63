"""Combined QAT + iterative magnitude pruning local search.

For each fixed-point format in the schedule: attach fake quantization, run a
warmup, snapshot, then repeatedly prune the smallest surviving weights,
fine-tune, log (sparsity, effective BOPs, metric), and rewind survivors to
their post-warmup values with pruned entries zeroed. The best weights seen
per format are checkpointed. Masks only ever lose entries, so sparsity is
monotone across iterations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hwnas.config import LocalSearchSchedule
from hwnas.costs import effective_bops
from hwnas.datasets import DatasetTable, FoldPlan
from hwnas.nn import (Network, TrainConfig, clone, evaluate, restore,
                      snapshot, train_epochs)
from hwnas.quantize import FixedPointFormat, quantize_array


@dataclass
class IterationLog:
    iteration: int
    global_density: float
    effective_bops: float
    val_metric: float


@dataclass
class CompressionResult:
    precision: FixedPointFormat
    best_weights: dict        # nn snapshot
    best_masks: list          # masks at the best iteration
    best_metric: float
    log: list[IterationLog] = field(default_factory=list)


def attach_qat(net: Network, fmt: FixedPointFormat) -> Network:
    """Copy of the network with fake quantization active on every weight
    read and hidden post-activation value."""
    out = clone(net)
    out.quant = fmt
    return out


def prune_step(net: Network, rate: float) -> None:
    """Mask the floor(rate * surviving) smallest-magnitude surviving weights
    of each layer; ties go to the lowest row-major index. Layers with no
    survivors are skipped."""
    if not (0.0 < rate < 1.0):
        raise ValueError("pruning rate must be in (0, 1)")
    for layer in net.layers:
        flat_mask = layer.mask.ravel()
        alive = np.flatnonzero(flat_mask)
        n_prune = int(np.floor(rate * alive.size))
        if alive.size == 0 or n_prune == 0:
            continue
        eff = layer.weights * layer.mask
        if net.quant is not None:
            eff = quantize_array(eff, net.quant)
        mags = np.abs(eff.ravel()[alive])
        # stable sort keeps row-major order among equal magnitudes
        order = np.argsort(mags, kind="stable")
        flat_mask[alive[order[:n_prune]]] = 0.0
        layer.weights.ravel()[alive[order[:n_prune]]] = 0.0


def rewind(net: Network, warmup_snapshot: dict,
           masks: Optional[list] = None) -> None:
    """Lottery-ticket rewind: restore all parameters to their post-warmup
    values, then zero the pruned weights. If `masks` is given it replaces
    the network's current masks first."""
    restore(net, warmup_snapshot)
    if masks is not None:
        for layer, m in zip(net.layers, masks):
            if m.shape != layer.mask.shape:
                raise ValueError("mask shape mismatch")
            layer.mask = m.copy()
    for layer in net.layers:
        layer.weights *= layer.mask


def sparsity(net: Network) -> dict:
    """Per-layer and global density (fraction of unmasked weights)."""
    per_layer = []
    alive = 0
    total = 0
    for layer in net.layers:
        n = layer.mask.size
        a = int(layer.mask.sum())
        per_layer.append(a / n)
        alive += a
        total += n
    return {"per_layer": per_layer, "global": alive / total}


def _masks_of(net: Network) -> list:
    return [layer.mask.copy() for layer in net.layers]


def local_search(seed_net: Network, schedule: LocalSearchSchedule,
                 data: DatasetTable, folds: Optional[FoldPlan] = None,
                 batch_size: int = 128, learning_rate: float = 1e-3,
                 seed: int = 0, metric: str = "accuracy",
                 ) -> list[CompressionResult]:
    """Run the full schedule for every precision in order.

    With a fold plan the same schedule runs per fold and logged metrics are
    fold means; the checkpointed weights come from the first fold at the
    best mean-metric iteration.
    """
    results = []
    for fmt in schedule.precisions:
        results.append(_search_one_precision(
            seed_net, fmt, schedule, data, folds, batch_size,
            learning_rate, seed, metric))
    return results


def _search_one_precision(seed_net, fmt, schedule, data, folds, batch_size,
                          learning_rate, seed, metric) -> CompressionResult:
    k = folds.k if folds is not None else 1
    per_fold_metrics = np.zeros((schedule.iterations, k))
    first_fold_states = []  # (snapshot, masks) per iteration, fold 0 only
    densities = None
    ebops = None

    for f in range(k):
        if folds is not None and folds.k > 1:
            train_idx, val_idx = folds.train_val_indices(f)
            train_set = data.subset(train_idx)
            val_set = data.subset(val_idx)
        else:
            train_set = val_set = data

        net = attach_qat(seed_net, fmt)
        warm_cfg = TrainConfig(epochs=schedule.qat_epochs,
                               batch_size=batch_size,
                               learning_rate=learning_rate,
                               seed=seed + 7919 * f)
        train_epochs(net, train_set, None, warm_cfg, metric)
        warmup = snapshot(net)

        for it in range(schedule.iterations):
            prune_step(net, schedule.pruning_rate)
            it_cfg = TrainConfig(epochs=schedule.epochs_per_iteration,
                                 batch_size=batch_size,
                                 learning_rate=learning_rate,
                                 seed=seed + 7919 * f + it + 1)
            train_epochs(net, train_set, None, it_cfg, metric)
            per_fold_metrics[it, f] = evaluate(net, val_set, metric)
            if f == 0:
                first_fold_states.append((snapshot(net), _masks_of(net)))
                densities = sparsity(net)
                ebops = effective_bops(net)
            rewind(net, warmup)

        if f == 0:
            # density trajectory is mask-driven and identical across folds
            density_log = []
            bops_log = []
            probe = attach_qat(seed_net, fmt)
            for it, (_, masks) in enumerate(first_fold_states):
                for layer, m in zip(probe.layers, masks):
                    layer.mask = m
                density_log.append(sparsity(probe)["global"])
                bops_log.append(effective_bops(probe))

    mean_metrics = per_fold_metrics.mean(axis=1)
    best_it = int(np.argmax(mean_metrics))
    best_snap, best_masks = first_fold_states[best_it]
    log = [IterationLog(iteration=i, global_density=density_log[i],
                        effective_bops=bops_log[i],
                        val_metric=float(mean_metrics[i]))
           for i in range(schedule.iterations)]
    return CompressionResult(precision=fmt, best_weights=best_snap,
                             best_masks=best_masks,
                             best_metric=float(mean_metrics[best_it]),
                             log=log)


def write_iteration_log(results: list[CompressionResult], path: str) -> None:
    """CSV log: precision, iteration, global_density, effective_bops,
    val_metric."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["precision", "iteration", "global_density",
                         "effective_bops", "val_metric"])
        for res in results:
            tag = f"({res.precision.total_bits},{res.precision.integer_bits})"
            for entry in res.log:
                writer.writerow([tag, entry.iteration,
                                 repr(entry.global_density),
                                 repr(entry.effective_bops),
                                 repr(entry.val_metric)])
