"""Multi-objective evolutionary machinery: Pareto dominance, nondominated
sorting (via the compiled kernel when available), crowding distance, binary
tournament selection, categorical crossover/mutation, the steady-state
evolve loop, and checkpoint-selection rules.

Workers coordinate only through the study store: each reads the shared
trial log, breeds a candidate against the current best population, and
appends its result. Failed trials stay in the log for audit but are
invisible to every genetic operator.
"""

from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from hwnas import kernels
from hwnas.config import ObjectiveSpec, SearchSpace, sample_uniform


class EmptySelectionError(LookupError):
    """No trial satisfies the selection rule's threshold."""


def _signed_matrix(rows: list, specs: tuple[ObjectiveSpec, ...]) -> np.ndarray:
    """Objective vectors normalized so that every column is minimized."""
    signs = np.array([-1.0 if s.direction == "maximize" else 1.0
                      for s in specs])
    return np.asarray(rows, dtype=np.float64) * signs


def dominates(a, b, specs: tuple[ObjectiveSpec, ...]) -> bool:
    """True iff `a` is no worse than `b` everywhere and better somewhere."""
    av, bv = _signed_matrix([list(a), list(b)], specs)
    return bool(np.all(av <= bv) and np.any(av < bv))


def nondominated_sort(points: list, specs: tuple[ObjectiveSpec, ...]
                      ) -> list[list[int]]:
    """Fronts of indices (rank 0 first). Points with NaN objectives are
    excluded with a warning and appear in no front."""
    pts = _signed_matrix(points, specs) if len(points) else \
        np.empty((0, len(specs)))
    valid = np.isfinite(pts).all(axis=1)
    if not valid.all():
        warnings.warn(f"excluding {int((~valid).sum())} point(s) with "
                      "non-finite objectives from nondominated sort")
    idx = np.flatnonzero(valid)
    ranks = kernels.nondominated_rank(np.ascontiguousarray(pts[idx]))
    fronts: list[list[int]] = [[] for _ in range(int(ranks.max()) + 1)] \
        if ranks.size else []
    for i, r in zip(idx, ranks):
        fronts[int(r)].append(int(i))
    return fronts


def crowding_distance(front_points: list, specs: tuple[ObjectiveSpec, ...]
                      ) -> np.ndarray:
    """Per-point crowding distance within one front; boundary points get
    +inf and zero-range objectives contribute nothing."""
    n = len(front_points)
    dist = np.zeros(n)
    if n == 0:
        return dist
    pts = _signed_matrix(front_points, specs)
    if n <= 2:
        return np.full(n, np.inf)
    for m in range(pts.shape[1]):
        order = np.argsort(pts[:, m], kind="stable")
        lo, hi = pts[order[0], m], pts[order[-1], m]
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        if hi > lo:
            gaps = (pts[order[2:], m] - pts[order[:-2], m]) / (hi - lo)
            dist[order[1:-1]] += gaps
    return dist


@dataclass
class RankedPoint:
    index: int        # caller-side identity (e.g. trial id)
    rank: int
    crowding: float


def rank_population(points: list, specs) -> list[RankedPoint]:
    ranked = []
    for rank, front in enumerate(nondominated_sort(points, specs)):
        cd = crowding_distance([points[i] for i in front], specs)
        for i, d in zip(front, cd):
            ranked.append(RankedPoint(index=i, rank=rank, crowding=float(d)))
    ranked.sort(key=lambda rp: rp.index)
    return ranked


def _tournament(a: RankedPoint, b: RankedPoint,
                rng: np.random.Generator) -> RankedPoint:
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.random() < 0.5 else b


def select_parents(population: list[RankedPoint], rng: np.random.Generator,
                   n_pairs: int = 1) -> list[tuple[RankedPoint, RankedPoint]]:
    """Binary tournament by (rank, crowding, coin flip)."""
    pairs = []
    for _ in range(n_pairs):
        picks = []
        for _ in range(2):
            i = int(rng.integers(len(population)))
            j = int(rng.integers(len(population)))
            picks.append(_tournament(population[i], population[j], rng))
        pairs.append((picks[0], picks[1]))
    return pairs


def crossover(a: dict, b: dict, space: SearchSpace,
              rng: np.random.Generator) -> dict:
    """Uniform per-gene crossover over the union of active genes, walked in
    dependency order so the child always decodes."""
    child: dict = {}
    for name in space.topo_order:
        dom = space.domain(name)
        if dom.depends_on is not None:
            if dom.depends_on not in child or \
                    child[dom.depends_on] not in dom.when_values:
                continue
        sources = [p[name] for p in (a, b) if name in p]
        if not sources:
            child[name] = dom.choices[int(rng.integers(len(dom.choices)))]
        elif len(sources) == 1:
            child[name] = sources[0]
        else:
            child[name] = sources[int(rng.integers(2))]
    return child


def mutate(assignment: dict, space: SearchSpace, p_mut: float,
           rng: np.random.Generator) -> dict:
    """Resample each gene independently with probability p_mut, then
    re-resolve conditional activation top-down."""
    out: dict = {}
    for name in space.topo_order:
        dom = space.domain(name)
        if dom.depends_on is not None:
            if dom.depends_on not in out or \
                    out[dom.depends_on] not in dom.when_values:
                continue
        if name in assignment and rng.random() >= p_mut:
            out[name] = assignment[name]
        else:
            out[name] = dom.choices[int(rng.integers(len(dom.choices)))]
    return out


@dataclass(frozen=True)
class EvolveConfig:
    population_size: int
    trial_budget: int
    p_mut: Optional[float] = None  # default 1 / number of genes
    seed: int = 0


def evolve(handle, evaluator: Callable, space: SearchSpace,
           specs: tuple[ObjectiveSpec, ...], cfg: EvolveConfig,
           worker_id: str = "w0",
           worker_quota: Optional[int] = None) -> list:
    """Steady-state NSGA-II against the shared trial log.

    `evaluator(assignment, trial_id)` returns (objective values in study
    order, aux dict) or raises; failures are recorded FAILED and skipped by
    the genetic operators. Returns the Pareto archive (COMPLETE records).
    """
    from hwnas.nn import TrialFailure

    p_mut = cfg.p_mut if cfg.p_mut is not None else 1.0 / len(space.params)
    rng = np.random.default_rng((cfg.seed, zlib.crc32(worker_id.encode())))
    done_by_me = 0
    pool: list[tuple[dict, RankedPoint]] = []
    pool_stamp = -1

    while True:
        complete = handle.list_trials(state="COMPLETE")
        if len(complete) >= cfg.trial_budget:
            break
        if worker_quota is not None and done_by_me >= worker_quota:
            break

        if len(complete) < cfg.population_size:
            assignment = sample_uniform(space, rng)
        else:
            # refresh the breeding pool once per population's worth of trials
            stamp = len(complete) // cfg.population_size
            if stamp != pool_stamp or not pool:
                points = [t.objectives for t in complete]
                ranked = rank_population(points, specs)
                ranked.sort(key=lambda rp: (rp.rank, -rp.crowding, rp.index))
                pool = [(complete[rp.index].params, rp)
                        for rp in ranked[:cfg.population_size]]
                pool_stamp = stamp
            ranked_only = [rp for _, rp in pool]
            (pa, pb), = select_parents(ranked_only, rng, n_pairs=1)
            a = pool[ranked_only.index(pa)][0]
            b = pool[ranked_only.index(pb)][0]
            assignment = mutate(crossover(a, b, space, rng), space, p_mut,
                               rng)

        trial_id = handle.claim_trial_id(worker_id, params=assignment)
        try:
            values, aux = evaluator(assignment, trial_id)
            if not np.all(np.isfinite(values)):
                raise TrialFailure(f"non-finite objectives {values!r}")
            handle.append_result(trial_id, objectives=list(values), aux=aux)
            done_by_me += 1
        except TrialFailure as exc:
            handle.append_result(trial_id, failure=str(exc))

    return pareto_front(handle.list_trials(state="COMPLETE"), specs)


def pareto_front(trials: list, specs: tuple[ObjectiveSpec, ...]) -> list:
    """Rank-0 subset of COMPLETE trial records."""
    complete = [t for t in trials if t.state == "COMPLETE"]
    if not complete:
        return []
    fronts = nondominated_sort([t.objectives for t in complete], specs)
    return [complete[i] for i in fronts[0]] if fronts else []


def _task_metric_index(specs: tuple[ObjectiveSpec, ...]) -> int:
    for i, s in enumerate(specs):
        if s.direction == "maximize":
            return i
    raise ValueError("no maximized objective to use as the task metric")


def select_checkpoint(trials: list, specs: tuple[ObjectiveSpec, ...],
                      rule: str, threshold: float):
    """Checkpoint-selection rules over the trial log.

    optimal_accuracy(t): among nondominated trials with task metric > t,
    the highest-metric one. optimal_resource(floor): among trials with task
    metric >= floor, the Pareto-optimal trial minimizing (mean utilization,
    latency cycles, BOPs) lexicographically. Remaining ties go to the
    lowest trial id.
    """
    metric_i = _task_metric_index(specs)
    complete = [t for t in trials if t.state == "COMPLETE"]

    if rule == "optimal_accuracy":
        front = pareto_front(complete, specs)
        passing = [t for t in front if t.objectives[metric_i] > threshold]
        if not passing:
            raise EmptySelectionError(
                f"no nondominated trial with metric > {threshold}")
        return max(passing, key=lambda t: (t.objectives[metric_i],
                                           -t.trial_id))
    if rule == "optimal_resource":
        passing = [t for t in complete
                   if t.objectives[metric_i] >= threshold]
        if not passing:
            raise EmptySelectionError(
                f"no trial with metric >= {threshold}")
        front = pareto_front(passing, specs)

        def key(t):
            aux = t.aux or {}
            return (aux.get("mean_utilization", float("inf")),
                    aux.get("latency_cycles", float("inf")),
                    aux.get("bops", float("inf")),
                    t.trial_id)

        return min(front, key=key)
    raise ValueError(f"unknown selection rule {rule!r}")
