"""Command-line entry points.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 empty
selection. The store path comes from the config, may be overridden with
--store, and the HWNAS_STORE environment variable overrides both.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np
import yaml

from hwnas import costs, datasets, pipeline, store
from hwnas.config import (ArchitectureSpec, ConfigError, DecodeError,
                          ExperimentConfig, HlsConfig, parse_config)
from hwnas.nsga2 import EmptySelectionError, select_checkpoint
from hwnas.quantize import FixedPointFormat

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_EMPTY_SELECTION = 3


def _load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _store_path(cfg: ExperimentConfig, flag: str | None) -> str:
    return os.environ.get("HWNAS_STORE") or flag or cfg.store_path


@click.group()
def cli():
    """Hardware-aware architecture search, compression, and export."""


@cli.command("global-search")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--store", "store_flag", default=None)
@click.option("--worker-id", default="w0")
@click.option("--trials", "worker_quota", type=int, default=None,
              help="Per-worker COMPLETE-trial quota (default: until the "
                   "global budget is met).")
@click.option("--seed", type=int, default=None, help="Override study seed.")
def cmd_global_search(config_path, store_flag, worker_id, worker_quota,
                      seed):
    """Run this worker's share of the global search, then write the archive
    CSV and the selected-checkpoint YAML next to the store."""
    cfg = _load_config(config_path)
    if seed is not None:
        cfg = parse_config(yaml.safe_dump(_with_seed(cfg, seed),
                                          sort_keys=False))
    path = _store_path(cfg, store_flag)
    handle, archive = pipeline.run_global_search(
        cfg, worker_id=worker_id, worker_quota=worker_quota,
        store_path=path)
    handle.export_csv(path + ".archive.csv")
    if archive:
        best = select_checkpoint(handle.list_trials(), cfg.objectives,
                                 "optimal_accuracy", threshold=-np.inf)
        with open(path + ".checkpoint.yaml", "w", encoding="utf-8") as fh:
            yaml.safe_dump(pipeline.checkpoint_payload(cfg, best), fh,
                           sort_keys=False)
    click.echo(f"{len(handle.list_trials(state='COMPLETE'))} complete "
               f"trials; archive size {len(archive)}")


def _with_seed(cfg: ExperimentConfig, seed: int) -> dict:
    raw = cfg.to_dict()
    raw["study"]["seed"] = seed
    return raw


@cli.command("local-search")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--checkpoint", "checkpoint_path", required=True,
              type=click.Path(exists=True))
@click.option("--out-dir", default=".", type=click.Path())
def cmd_local_search(config_path, checkpoint_path, out_dir):
    """Compress the selected checkpoint over every configured precision."""
    from hwnas import compression
    from hwnas.nn import save_snapshot

    cfg = _load_config(config_path)
    with open(checkpoint_path, encoding="utf-8") as fh:
        checkpoint = yaml.safe_load(fh)
    results, _, _, _ = pipeline.run_local_search(cfg, checkpoint)
    os.makedirs(out_dir, exist_ok=True)
    for res in results:
        tag = f"{res.precision.total_bits}_{res.precision.integer_bits}"
        save_snapshot(res.best_weights,
                      os.path.join(out_dir, f"compressed_{tag}.json"),
                      masks=res.best_masks)
        click.echo(f"precision ({res.precision.total_bits},"
                   f"{res.precision.integer_bits}): best metric "
                   f"{res.best_metric:.4f}")
    compression.write_iteration_log(
        results, os.path.join(out_dir, "local_search_log.csv"))


@cli.command("select")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--store", "store_flag", default=None)
@click.option("--rule", type=click.Choice(["optimal_accuracy",
                                           "optimal_resource"]),
              required=True)
@click.option("--threshold", type=float, required=True)
@click.option("--out", "out_path", default=None, type=click.Path())
def cmd_select(config_path, store_flag, rule, threshold, out_path):
    """Apply a checkpoint-selection rule and emit the trial as YAML."""
    cfg = _load_config(config_path)
    handle = pipeline.open_study(cfg, _store_path(cfg, store_flag))
    trial = select_checkpoint(handle.list_trials(), cfg.objectives, rule,
                              threshold)
    payload = pipeline.checkpoint_payload(cfg, trial)
    text = yaml.safe_dump(payload, sort_keys=False)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    click.echo(text, nl=False)


@cli.command("export-front")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--store", "store_flag", default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "svg"]),
              default="csv")
@click.option("--axes", default=None,
              help="Comma-separated x,y axis names (objective or aux).")
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_export_front(config_path, store_flag, fmt, axes, out_path):
    """Export the sampled-architecture scatter as CSV or SVG."""
    cfg = _load_config(config_path)
    handle = pipeline.open_study(cfg, _store_path(cfg, store_flag))
    if axes:
        ax = tuple(a.strip() for a in axes.split(","))
        if len(ax) != 2:
            raise ConfigError("--axes must name exactly two columns")
    else:
        ax = (cfg.objectives[0].metric,
              cfg.objectives[1].metric if len(cfg.objectives) > 1
              else cfg.objectives[0].metric)
    if fmt == "csv":
        pipeline.export_front_csv(handle, cfg.objectives, out_path, ax)
    else:
        pipeline.export_front_svg(handle, cfg.objectives, out_path, ax)
    click.echo(out_path)


@cli.command("estimate")
@click.option("--arch", "arch_path", required=True,
              type=click.Path(exists=True),
              help="YAML file with an architecture spec mapping.")
@click.option("--board", default="VU13P")
@click.option("--strategy", type=click.Choice(["latency", "resource"]),
              default="latency")
@click.option("--io-type", type=click.Choice(["parallel", "stream"]),
              default="parallel")
@click.option("--reuse-factor", type=int, default=1)
@click.option("--precision", default="16,6",
              help="total_bits,integer_bits")
@click.option("--input-dim", type=int, default=None)
@click.option("--surrogate", "use_surrogate", is_flag=True, default=False,
              help="Score with a freshly trained surrogate instead of the "
                   "analytic oracle (needs a 'space' key in the file).")
def cmd_estimate(arch_path, board, strategy, io_type, reuse_factor,
                 precision, input_dim, use_surrogate):
    """Print the resource estimate and BOPs for one architecture."""
    with open(arch_path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    try:
        spec = ArchitectureSpec.from_dict(raw)
    except (KeyError, TypeError) as exc:
        raise DecodeError(f"malformed architecture file: {exc}") from exc
    t, i = (int(v) for v in precision.split(","))
    hls = HlsConfig(board=board, strategy=strategy, io_type=io_type,
                    reuse_factor=reuse_factor,
                    default_precision=FixedPointFormat(t, i))
    in_dim = costs.spec_input_dim(spec, input_dim)
    if use_surrogate:
        from hwnas.config import _parse_space
        space = _parse_space(raw["space"])
        samples = costs.oracle_labeled_samples(space, hls, 400, seed=0,
                                               input_dim=in_dim,
                                               output_dim=spec.output_dim)
        model = costs.train_surrogate(samples, board=board, seed=0)
        est = costs.predict(model, costs.featurize(spec, hls, in_dim))
    else:
        est = costs.analytic_estimate(spec, hls, input_dim=in_dim)
    bops_val = costs.bops(spec, t, t, input_dim=in_dim)
    out = est.to_dict()
    out["mean_utilization"] = costs.mean_utilization(est)
    out["bops"] = bops_val
    click.echo(json.dumps(out, indent=2, sort_keys=True))


@cli.command("export-firmware")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--checkpoint", "checkpoint_path", required=True,
              type=click.Path(exists=True),
              help="Checkpoint YAML from 'select'.")
@click.option("--weights", "weights_path", required=True,
              type=click.Path(exists=True),
              help="Compressed snapshot JSON from 'local-search'.")
@click.option("--precision", required=True,
              help="total_bits,integer_bits of the snapshot")
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_export_firmware(config_path, checkpoint_path, weights_path,
                        precision, out_path):
    """Write the lossless firmware descriptor JSON for a compressed model."""
    from hwnas.firmware import encode_firmware, save_descriptor
    from hwnas.nn import build, load_snapshot, restore

    cfg = _load_config(config_path)
    with open(checkpoint_path, encoding="utf-8") as fh:
        checkpoint = yaml.safe_load(fh)
    table = pipeline.make_dataset(cfg)
    output_dim = table.class_count if table.class_count > 2 else 1
    from hwnas.config import decode_architecture
    spec = decode_architecture(checkpoint["params"], cfg.space,
                               output_dim=output_dim,
                               output_activation="softmax"
                               if output_dim > 1 else "none-logits")
    trial_table, _ = pipeline.prepare_trial_table(spec, table)
    t, i = (int(v) for v in precision.split(","))
    snap, masks = load_snapshot(weights_path)
    net = build(spec, trial_table.n_features, spec.output_dim, seed=0)
    net.quant = FixedPointFormat(t, i)
    restore(net, snap)
    if masks is not None:
        for layer, m in zip(net.layers, masks):
            layer.mask = m
    descriptor = encode_firmware(net, spec, cfg.hls, provenance={
        "study": cfg.study_name,
        "trial_id": checkpoint.get("trial_id"),
        "precision": [t, i],
        "objectives": checkpoint.get("objectives", {}),
    })
    save_descriptor(descriptor, out_path)
    click.echo(out_path)


@cli.command("gen-data")
@click.option("--kind", type=click.Choice(["jet", "qubit"]), required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--n", type=int, default=1000)
@click.option("--dims", type=int, default=16)
@click.option("--classes", type=int, default=5)
@click.option("--separation", type=float, default=3.0)
@click.option("--series-length", type=int, default=800)
@click.option("--informative-start", type=int, default=200)
@click.option("--informative-size", type=int, default=200)
@click.option("--snr", type=float, default=2.0)
@click.option("--seed", type=int, default=0)
def cmd_gen_data(kind, out_path, n, dims, classes, separation,
                 series_length, informative_start, informative_size, snr,
                 seed):
    """Generate a synthetic dataset CSV (plus a sidecar schema for series
    data)."""
    from hwnas.config import WindowSpec
    if kind == "jet":
        table = datasets.gen_jet_like(n, dims, classes, separation, seed)
    else:
        table = datasets.gen_iq_readout(
            n, series_length, WindowSpec(informative_start,
                                         informative_size), snr, seed)
        with open(out_path + ".schema.json", "w", encoding="utf-8") as fh:
            json.dump({"series_length": series_length,
                       "layout": "I block then Q block"}, fh)
    datasets.export_csv(table, out_path)
    click.echo(out_path)


@cli.command("doctor")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--store", "store_flag", default=None)
@click.option("--stale-after", type=float, default=3600.0,
              help="Report RUNNING stubs older than this many seconds.")
def cmd_doctor(config_path, store_flag, stale_after):
    """Report study health; stale RUNNING stubs are never auto-deleted."""
    cfg = _load_config(config_path)
    handle = pipeline.open_study(cfg, _store_path(cfg, store_flag))
    trials = handle.list_trials()
    by_state = {}
    for t in trials:
        by_state[t.state] = by_state.get(t.state, 0) + 1
    click.echo(f"trials: {len(trials)} {by_state}")
    stale = handle.stale_running(stale_after)
    for t in stale:
        click.echo(f"stale RUNNING trial {t.trial_id} "
                   f"(worker {t.worker_id})")
    click.echo(f"{len(stale)} stale RUNNING stub(s)")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except EmptySelectionError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_EMPTY_SELECTION
    except (ConfigError, DecodeError, click.UsageError,
            datasets.DatasetError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VALIDATION
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (store.StoreError, OSError, ValueError, RuntimeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
