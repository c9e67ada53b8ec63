"""Acceptance suite: one criterion per test, one PASS/FAIL line each.

Run with `pytest -v -s tests/test_acceptance.py` to see the per-criterion
verdict lines alongside the pytest report.
"""

import math
import multiprocessing as mp
import textwrap
import time
from contextlib import contextmanager

import numpy as np
import pytest

from hwnas import pipeline
from hwnas.compression import prune_step, rewind, sparsity
from hwnas.config import (ArchitectureSpec, HlsConfig, ObjectiveSpec,
                          ParamDomain, SearchSpace, parse_config)
from hwnas.costs import (bops_layer, get_board, oracle_labeled_samples,
                         predict, train_surrogate, utilization_pct)
from hwnas.datasets import gen_jet_like
from hwnas.nn import TrainConfig, build, evaluate, gradients, snapshot, \
    train_epochs
from hwnas.nsga2 import (EvolveConfig, crowding_distance, dominates, evolve,
                         nondominated_sort, pareto_front, select_checkpoint)
from hwnas.quantize import FixedPointFormat, on_grid, quantize_array
from hwnas.store import StudyMeta, open_or_create


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"{name}: FAIL")
        raise
    print(f"{name}: PASS")


# --------------------------------------------------------------------------
# A1: nondominated sorting + crowding vs brute-force oracles
# --------------------------------------------------------------------------

def _oracle_fronts(points, specs):
    remaining = list(range(len(points)))
    fronts = []
    while remaining:
        front = [i for i in remaining
                 if not any(dominates(points[j], points[i], specs)
                            for j in remaining if j != i)]
        fronts.append(sorted(front))
        remaining = [i for i in remaining if i not in front]
    return fronts


def _oracle_crowding(front_points, specs):
    n = len(front_points)
    if n <= 2:
        return np.full(n, np.inf)
    signs = np.array([-1.0 if s.direction == "maximize" else 1.0
                      for s in specs])
    pts = np.asarray(front_points) * signs
    dist = np.zeros(n)
    for m in range(pts.shape[1]):
        order = np.argsort(pts[:, m], kind="stable")
        dist[order[0]] = dist[order[-1]] = np.inf
        span = pts[order[-1], m] - pts[order[0], m]
        if span > 0:
            for k in range(1, n - 1):
                dist[order[k]] += (pts[order[k + 1], m]
                                   - pts[order[k - 1], m]) / span
    return dist


def test_A1_sorting_oracle_equivalence():
    with criterion("A1 nondominated-sorting oracle equivalence"):
        specs = (ObjectiveSpec("a", "minimize"),
                 ObjectiveSpec("b", "maximize"),
                 ObjectiveSpec("c", "minimize"))
        start = time.monotonic()
        for seed in range(20):
            pts = np.random.default_rng(seed).random((200, 3)).tolist()
            fronts = nondominated_sort(pts, specs)
            assert [sorted(f) for f in fronts] == _oracle_fronts(pts, specs)
            for front in fronts:
                got = crowding_distance([pts[i] for i in front], specs)
                want = _oracle_crowding([pts[i] for i in front], specs)
                finite = np.isfinite(want)
                assert np.array_equal(np.isinf(got), np.isinf(want))
                assert np.abs(got[finite] - want[finite]).max(initial=0) \
                    <= 1e-9
        elapsed = time.monotonic() - start
        assert elapsed < 5.0, f"took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# A2: backprop vs central finite differences
# --------------------------------------------------------------------------

def test_A2_gradient_correctness():
    with criterion("A2 gradient correctness"):
        from hwnas.nn import loss_and_gradients

        activations = ["relu", "tanh", "sigmoid", "leaky_relu", "none"]
        rng = np.random.default_rng(0)
        for activation in activations:
            for bn in (False, True):
                for l1 in (0.0, 1e-4):
                    spec = ArchitectureSpec(depth=2, layer_widths=(9, 7),
                                            activation=activation,
                                            batch_norm=bn, l1_lambda=l1)
                    net = build(spec, 6, 4, seed=hash((activation, bn)) % 97)
                    x = rng.normal(size=(16, 6))
                    y = rng.integers(0, 4, size=16)
                    analytic = gradients(net, x, y)
                    flat = []
                    for layer, g in zip(net.layers, analytic):
                        flat.append((layer, "weights", g["weights"]))
                        flat.append((layer, "bias", g["bias"]))
                        if layer.bn is not None:
                            flat.append((layer.bn, "gamma", g["gamma"]))
                            flat.append((layer.bn, "beta", g["beta"]))
                    checked = 0
                    for holder, attr, g in flat:
                        arr = getattr(holder, attr)
                        n_pick = min(32, arr.size)
                        picks = rng.choice(arr.size, size=n_pick,
                                           replace=False)
                        for flat_i in picks:
                            index = np.unravel_index(flat_i, arr.shape)
                            orig = arr[index]
                            eps = 1e-6
                            arr[index] = orig + eps
                            lp, _ = loss_and_gradients(net, x, y, train=True)
                            arr[index] = orig - eps
                            lm, _ = loss_and_gradients(net, x, y, train=True)
                            arr[index] = orig
                            num = (lp - lm) / (2 * eps)
                            ana = g[index]
                            rel = abs(num - ana) / max(1.0, abs(num),
                                                       abs(ana))
                            assert rel <= 1e-4, \
                                (activation, bn, l1, attr, index, num, ana)
                            checked += 1
                    assert checked >= 100


# --------------------------------------------------------------------------
# A3: quantization grid, pruning density, rewind bit-equality
# --------------------------------------------------------------------------

def test_A3_quantization_pruning_invariants():
    with criterion("A3 quantization/pruning invariants"):
        from hwnas.compression import attach_qat
        from hwnas.nn import forward

        table = gen_jet_like(200, 8, 3, 3.0, seed=0)
        spec = ArchitectureSpec(depth=2, layer_widths=(32, 32))
        base = build(spec, 8, 3, seed=0)
        train_epochs(base, table, None,
                     TrainConfig(epochs=3, batch_size=32,
                                 learning_rate=1e-2))
        for t, i in [(32, 16), (16, 6), (8, 3), (4, 1)]:
            fmt = FixedPointFormat(t, i)
            net = attach_qat(base, fmt)
            train_epochs(net, table, None,
                         TrainConfig(epochs=2, batch_size=32,
                                     learning_rate=1e-2))
            for layer in net.layers:
                w_read = quantize_array(layer.weights * layer.mask, fmt)
                assert on_grid(w_read, fmt)
            forward(net, table.features)  # quantized reads stay valid

        # density after 10 prune rounds at rate 0.2
        net = attach_qat(base, FixedPointFormat(16, 6))
        expected_alive = 0
        total = 0
        for layer in net.layers:
            alive = layer.mask.size
            for _ in range(10):
                alive -= int(np.floor(0.2 * alive))
            expected_alive += alive
            total += layer.mask.size
        warmup = snapshot(net)
        for _ in range(10):
            prune_step(net, 0.2)
        density = sparsity(net)["global"]
        assert density == pytest.approx(expected_alive / total)
        assert abs(density - 0.8 ** 10) <= 0.01  # floor granularity

        # rewind: survivors bit-equal the warmup snapshot, pruned are zero
        train_epochs(net, table, None,
                     TrainConfig(epochs=1, batch_size=32))
        rewind(net, warmup)
        for layer, entry in zip(net.layers, warmup["layers"]):
            surv = layer.mask == 1
            assert np.array_equal(layer.weights[surv],
                                  entry["weights"][surv])
            assert np.all(layer.weights[~surv] == 0.0)


# --------------------------------------------------------------------------
# A4: BOPs closed form vs brute-force bit counting
# --------------------------------------------------------------------------

def _count_bops_brute_force(n, m, b_w, b_a, alive_mask):
    """Count bit operations one multiplier/adder at a time."""
    total = 0
    for j in range(m):
        for i in range(n):
            if alive_mask[i, j]:
                total += b_w * b_a           # one partial-product array
            total += b_a + b_w + math.ceil(math.log2(n))  # accumulator slot
    return total


def test_A4_bops_contract():
    with criterion("A4 BOPs contract"):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 17))
            m = int(rng.integers(1, 17))
            b_w = int(rng.integers(1, 9))
            b_a = int(rng.integers(1, 9))
            mask = rng.random((n, m)) < rng.random()
            density = mask.sum() / mask.size
            assert bops_layer(n, m, b_w, b_a, density) == \
                pytest.approx(_count_bops_brute_force(n, m, b_w, b_a, mask))
        # multiplier term is exactly linear in density
        base = bops_layer(12, 9, 7, 5, 0.0)
        slope = bops_layer(12, 9, 7, 5, 1.0) - base
        for d in np.linspace(0, 1, 11):
            assert bops_layer(12, 9, 7, 5, d) == \
                pytest.approx(base + slope * d)


# --------------------------------------------------------------------------
# A5: multi-worker store integrity
# --------------------------------------------------------------------------

_A5_META = StudyMeta(study_name="a5", objectives=(("acc", "maximize"),),
                     space_digest="d", param_names=("g",))


def _a5_worker(path, worker_id):
    handle = open_or_create(path, _A5_META)
    for _ in range(10):
        tid = handle.claim_trial_id(worker_id, {"g": 1})
        handle.append_result(tid, objectives=[float(tid)])


def test_A5_multi_worker_integrity(tmp_path):
    with criterion("A5 multi-worker integrity"):
        import json
        ctx = mp.get_context("fork")
        for rep in range(20):
            path = str(tmp_path / f"j{rep}")
            open_or_create(path, _A5_META)
            procs = [ctx.Process(target=_a5_worker, args=(path, f"w{i}"))
                     for i in range(4)]
            for p in procs:
                p.start()
            for p in procs:
                p.join()
                assert p.exitcode == 0
            handle = open_or_create(path, _A5_META)
            complete = handle.list_trials(state="COMPLETE")
            assert len(complete) == 40
            assert {t.trial_id for t in complete} == set(range(40))
            with open(path, encoding="utf-8") as fh:
                records = [json.loads(line) for line in fh
                           if line.strip()]
            assert len(records) == 80  # 40 claims + 40 results, no tears


# --------------------------------------------------------------------------
# A6: surrogate fidelity on the large search space
# --------------------------------------------------------------------------

def _full_scale_space():
    return SearchSpace(params=(
        ParamDomain("depth", (4, 5, 6, 7, 8)),
        ParamDomain("width_1", (64, 120, 128)),
        ParamDomain("width_2", (32, 60, 64)),
        ParamDomain("width_3", (16, 32)),
        ParamDomain("width_4", (32, 64)),
        ParamDomain("width_5", (32, 64), "depth", (5, 6, 7, 8)),
        ParamDomain("width_6", (32, 64), "depth", (6, 7, 8)),
        ParamDomain("width_7", (16, 32), "depth", (7, 8)),
        ParamDomain("width_8", (32, 44, 64), "depth", (8,)),
        ParamDomain("activation", ("ReLU", "Tanh", "Sigmoid")),
        ParamDomain("batch_norm", (True, False)),
    ))


def test_A6_surrogate_fidelity():
    with criterion("A6 surrogate fidelity"):
        scipy_stats = pytest.importorskip("scipy.stats")
        start = time.monotonic()
        hls = HlsConfig(board="VU13P", strategy="resource", reuse_factor=8,
                        default_precision=FixedPointFormat(16, 6))
        samples = oracle_labeled_samples(_full_scale_space(), hls, 2400,
                                         seed=0, input_dim=16, output_dim=5)
        model = train_surrogate(samples[:2000], board="VU13P", seed=0,
                                epochs=150)
        held_out = samples[2000:]
        preds = [predict(model, f) for f, _ in held_out]
        for target in ("lut", "ff", "dsp", "bram", "latency_cycles"):
            truth = [getattr(est, target) for _, est in held_out]
            got = [getattr(p, target) for p in preds]
            rho = scipy_stats.spearmanr(truth, got).statistic
            assert rho >= 0.9, f"{target}: spearman {rho:.3f}"
        elapsed = time.monotonic() - start
        assert elapsed < 120.0, f"took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# A7: end-to-end multiclass pipeline analogue
# --------------------------------------------------------------------------

A7_YAML = textwrap.dedent("""\
    study:
      name: a7
      store: {store}
      seed: 11
    dataset:
      kind: jet
      n: 600
      dims: 16
      classes: 5
      separation: 2.5
    space:
      params:
        - name: depth
          choices: [1, 2, 3]
        - name: width_1
          choices: [8, 16, 32, 64]
        - name: width_2
          choices: [8, 16, 32]
          active_when: {{param: depth, values: [2, 3]}}
        - name: width_3
          choices: [8, 16]
          active_when: {{param: depth, values: [3]}}
        - name: activation
          choices: [relu, tanh]
        - name: batch_norm
          choices: [true, false]
    objectives:
      - {{metric: accuracy, direction: maximize}}
      - {{metric: mean_utilization, direction: minimize}}
      - {{metric: latency_cycles, direction: minimize}}
    hls:
      board: VU13P
      default_precision: [16, 6]
    local_search:
      qat_epochs: 3
      iterations: 4
      epochs_per_iteration: 3
      pruning_rate: 0.2
      precisions: [[16, 6]]
    runtime:
      trial_budget: 60
      population_size: 12
      epochs_per_trial: 5
      batch_size: 64
      k_folds: {k_folds}
      surrogate: {{enabled: false, samples: 100, epochs: 40}}
    """)


def test_A7_end_to_end_multiclass(tmp_path):
    with criterion("A7 end-to-end multiclass pipeline"):
        start = time.monotonic()
        store = tmp_path / "a7.journal"
        cfg = parse_config(A7_YAML.format(store=store, k_folds=3))
        handle, archive = pipeline.run_global_search(cfg)
        assert len(handle.list_trials(state="COMPLETE")) == 60
        assert len(archive) >= 3
        for a in archive:
            assert not any(dominates(b.objectives, a.objectives,
                                     cfg.objectives)
                           for b in archive if b is not a)

        trials = handle.list_trials()
        acc_pick = select_checkpoint(trials, cfg.objectives,
                                     "optimal_accuracy", 0.0)
        res_pick = select_checkpoint(trials, cfg.objectives,
                                     "optimal_resource", 0.0)
        assert acc_pick.objectives[0] >= res_pick.objectives[0]
        assert res_pick.aux["mean_utilization"] <= \
            acc_pick.aux["mean_utilization"]

        # single-fold local search: compression metric and float-seed
        # metric measure the same quantity
        ls_cfg = parse_config(A7_YAML.format(store=store, k_folds=1))
        checkpoint = pipeline.checkpoint_payload(ls_cfg, acc_pick)
        results, _, seed_net, normalized = pipeline.run_local_search(
            ls_cfg, checkpoint)
        float_metric = evaluate(seed_net, normalized)
        (res,) = results
        assert res.precision.as_pair() == (16, 6)
        assert res.best_metric >= float_metric - 0.02, \
            f"compressed {res.best_metric:.4f} vs float {float_metric:.4f}"
        elapsed = time.monotonic() - start
        assert elapsed < 600.0, f"took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# A8: informative-window recovery on I/Q series data
# --------------------------------------------------------------------------

A8_YAML = textwrap.dedent("""\
    study:
      name: a8
      store: {store}
      seed: {seed}
    dataset:
      kind: qubit
      n: 240
      series_length: 800
      informative_start: 200
      informative_size: 200
      snr: 2.0
    space:
      params:
        - name: depth
          choices: [2]
        - name: width_1
          choices: [2, 4]
        - name: width_2
          choices: [2, 4]
        - name: activation
          choices: [ReLU, LeakyReLU, "None"]
        - name: batch_norm
          choices: [BatchNorm, "None"]
        - name: window_size
          choices: {sizes}
        - name: window_start
          choices: {starts}
    objectives:
      - {{metric: fidelity, direction: maximize}}
      - {{metric: mean_utilization, direction: minimize}}
    hls:
      board: ZCU102
      reuse_factor: 8
      strategy: resource
      default_precision: [16, 6]
    local_search:
      qat_epochs: 1
      iterations: 1
      epochs_per_iteration: 1
      pruning_rate: 0.2
      precisions: [[16, 6]]
    runtime:
      trial_budget: 40
      population_size: 8
      epochs_per_trial: 4
      batch_size: 64
      k_folds: 1
      surrogate: {{enabled: false, samples: 100, epochs: 40}}
    """)


def test_A8_window_recovery(tmp_path):
    with criterion("A8 informative-window recovery"):
        sizes = list(range(25, 401, 25))
        starts = list(range(0, 726, 25))
        hits = 0
        for run in range(10):
            store = tmp_path / f"a8_{run}.journal"
            cfg = parse_config(A8_YAML.format(store=store, seed=100 + run,
                                              sizes=sizes, starts=starts))
            handle, _ = pipeline.run_global_search(cfg)
            complete = handle.list_trials(state="COMPLETE")
            best = max(complete, key=lambda t: t.aux["task_metric"])
            lo = best.aux["window_start"]
            hi = lo + best.aux["window_size"]
            if lo < 400 and hi > 200:
                hits += 1
        assert hits >= 8, f"window recovered in only {hits}/10 runs"


# --------------------------------------------------------------------------
# A9: NSGA-II convergence on a discretized bi-objective benchmark
# --------------------------------------------------------------------------

def _zdt1(xs):
    f1 = xs[0]
    g = 1.0 + 9.0 * float(np.mean(xs[1:]))
    f2 = g * (1.0 - math.sqrt(f1 / g))
    return f1, f2


def test_A9_nsga2_convergence(tmp_path):
    with criterion("A9 NSGA-II convergence"):
        levels = tuple(i / 32.0 for i in range(33))
        space = SearchSpace(params=tuple(
            ParamDomain(f"g{i}", levels) for i in range(8)))
        specs = (ObjectiveSpec("f1", "minimize"),
                 ObjectiveSpec("f2", "minimize"))
        meta = StudyMeta(study_name="a9", space_digest=space.digest(),
                         objectives=(("f1", "minimize"), ("f2", "minimize")),
                         param_names=space.names)
        ts = np.linspace(0.0, 1.0, 2001)
        true_front = np.column_stack([ts, 1.0 - np.sqrt(ts)])

        def evaluator(assignment, trial_id):
            xs = [assignment[f"g{i}"] for i in range(8)]
            f1, f2 = _zdt1(xs)
            return [f1, f2], {}

        distances = []
        for seed in range(5):
            handle = open_or_create(str(tmp_path / f"a9_{seed}"), meta)
            evolve(handle, evaluator, space, specs,
                   EvolveConfig(population_size=40, trial_budget=4000,
                                seed=seed))
            front = pareto_front(handle.list_trials(state="COMPLETE"),
                                 specs)
            pts = np.array([t.objectives for t in front])
            d = np.sqrt(((pts[:, None, :] - true_front[None, :, :]) ** 2)
                        .sum(axis=2)).min(axis=1)
            distances.append(float(d.mean()))
        assert float(np.mean(distances)) <= 0.05, distances


# --------------------------------------------------------------------------
# A10: reported utilization percentages
# --------------------------------------------------------------------------

def test_A10_percentage_arithmetic():
    with criterion("A10 utilization percentage arithmetic"):
        assert utilization_pct(54075, "lut", get_board("VU13P")) == 3.13
        assert utilization_pct(6996, "lut", get_board("ZCU102")) == 2.55
