"""Durable shared trial log for parallel search workers.

Storage is a line-delimited JSON journal plus a small JSON meta header.
Appends take an advisory exclusive flock and fsync before returning, so
concurrent workers on one filesystem never interleave or lose records.
Reads are lock-free: the journal is append-only and any prefix of whole
lines is a valid state; a partial trailing line (crash artifact) is skipped
with a warning.
"""

from __future__ import annotations

import fcntl
import json
import os
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

FORMAT_VERSION = 1


class StoreError(RuntimeError):
    pass


@dataclass(frozen=True)
class StudyMeta:
    study_name: str
    objectives: tuple  # of (metric, direction) pairs, order immutable
    space_digest: str
    param_names: tuple[str, ...]
    version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return {
            "study_name": self.study_name,
            "objectives": [list(o) for o in self.objectives],
            "space_digest": self.space_digest,
            "param_names": list(self.param_names),
            "version": self.version,
        }

    @staticmethod
    def from_dict(d: dict) -> "StudyMeta":
        return StudyMeta(
            study_name=d["study_name"],
            objectives=tuple(tuple(o) for o in d["objectives"]),
            space_digest=d["space_digest"],
            param_names=tuple(d["param_names"]),
            version=d["version"],
        )


@dataclass
class TrialRecord:
    trial_id: int
    worker_id: str
    params: dict
    state: str = "RUNNING"  # RUNNING | COMPLETE | FAILED
    objectives: Optional[list] = None
    aux: dict = field(default_factory=dict)
    claimed_at: float = 0.0
    finished_at: Optional[float] = None
    failure: Optional[str] = None


class StudyHandle:
    """Single-thread-per-process view onto a shared study journal."""

    def __init__(self, path: str, meta: StudyMeta):
        self.path = path
        self.meta = meta
        self._trials: dict[int, TrialRecord] = {}
        self._offset = 0

    # -- locking ----------------------------------------------------------

    @contextmanager
    def _locked(self):
        with open(self.path + ".lock", "a") as lockf:
            fcntl.flock(lockf, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(lockf, fcntl.LOCK_UN)

    # -- journal replay ---------------------------------------------------

    def _apply(self, rec: dict) -> None:
        kind = rec["kind"]
        if kind == "claim":
            self._trials[rec["trial_id"]] = TrialRecord(
                trial_id=rec["trial_id"], worker_id=rec["worker_id"],
                params=rec["params"], claimed_at=rec["ts"])
        elif kind == "result":
            trial = self._trials.get(rec["trial_id"])
            if trial is None:
                raise StoreError(f"result for unknown trial "
                                 f"{rec['trial_id']}")
            trial.state = rec["state"]
            trial.objectives = rec.get("objectives")
            trial.aux = rec.get("aux") or {}
            trial.failure = rec.get("failure")
            trial.finished_at = rec["ts"]
        else:
            raise StoreError(f"unknown journal record kind {kind!r}")

    def _refresh(self) -> None:
        try:
            size = os.path.getsize(self.path)
        except FileNotFoundError:
            return
        if size <= self._offset:
            return
        with open(self.path, "rb") as fh:
            fh.seek(self._offset)
            chunk = fh.read()
        end = chunk.rfind(b"\n")
        if end < 0:
            warnings.warn(f"{self.path}: partial trailing record ignored")
            return
        if end + 1 < len(chunk):
            warnings.warn(f"{self.path}: partial trailing record ignored")
        for line in chunk[:end].split(b"\n"):
            if line:
                self._apply(json.loads(line))
        self._offset += end + 1

    def _append_line(self, rec: dict) -> None:
        line = json.dumps(rec, sort_keys=True) + "\n"
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    # -- public operations ------------------------------------------------

    def claim_trial_id(self, worker_id: str, params: dict) -> int:
        """Atomically reserve the next trial id and append a RUNNING stub."""
        with self._locked():
            self._refresh()
            trial_id = max(self._trials, default=-1) + 1
            rec = {"kind": "claim", "trial_id": trial_id,
                   "worker_id": worker_id, "params": params,
                   "ts": time.time()}
            self._append_line(rec)
            self._apply(rec)
            self._offset = os.path.getsize(self.path)
        return trial_id

    def append_result(self, trial_id: int, objectives: Optional[list] = None,
                      failure: Optional[str] = None,
                      aux: Optional[dict] = None) -> None:
        if (objectives is None) == (failure is None):
            raise StoreError("exactly one of objectives/failure required")
        with self._locked():
            self._refresh()
            trial = self._trials.get(trial_id)
            if trial is None:
                raise StoreError(f"unknown trial id {trial_id}")
            if trial.state != "RUNNING":
                raise StoreError(f"trial {trial_id} already {trial.state}")
            if objectives is not None:
                expected = len(self.meta.objectives)
                if len(objectives) != expected:
                    raise StoreError(f"expected {expected} objectives, "
                                     f"got {len(objectives)}")
                rec = {"kind": "result", "trial_id": trial_id,
                       "state": "COMPLETE",
                       "objectives": [float(v) for v in objectives],
                       "aux": aux or {}, "ts": time.time()}
            else:
                rec = {"kind": "result", "trial_id": trial_id,
                       "state": "FAILED", "failure": failure,
                       "aux": aux or {}, "ts": time.time()}
            self._append_line(rec)
            self._apply(rec)
            self._offset = os.path.getsize(self.path)

    def list_trials(self, state: Optional[str] = None,
                    min_metric: Optional[float] = None,
                    metric_index: int = 0) -> list[TrialRecord]:
        """Point-in-time snapshot, ordered by trial id."""
        self._refresh()
        out = sorted(self._trials.values(), key=lambda t: t.trial_id)
        if state is not None:
            out = [t for t in out if t.state == state]
        if min_metric is not None:
            out = [t for t in out
                   if t.objectives is not None
                   and t.objectives[metric_index] >= min_metric]
        return out

    def stale_running(self, max_age_s: float) -> list[TrialRecord]:
        """RUNNING stubs older than the staleness window (doctor report;
        never auto-deleted)."""
        now = time.time()
        return [t for t in self.list_trials(state="RUNNING")
                if now - t.claimed_at > max_age_s]

    def export_csv(self, path: str) -> None:
        """One row per trial: id, state, params, objectives (study order),
        then aux columns sorted by name. Deterministic bytes for a fixed
        journal."""
        trials = self.list_trials()
        obj_names = [m for m, _ in self.meta.objectives]
        aux_cols = sorted({k for t in trials for k in t.aux}
                          - set(obj_names))
        header = (["trial_id", "state"] + list(self.meta.param_names)
                  + obj_names + aux_cols)
        lines = [",".join(header)]
        for t in trials:
            row = [str(t.trial_id), t.state]
            row += [_cell(t.params.get(p)) for p in self.meta.param_names]
            if t.objectives is not None:
                row += [repr(float(v)) for v in t.objectives]
            else:
                row += [""] * len(obj_names)
            row += [_cell(t.aux.get(k)) for k in aux_cols]
            lines.append(",".join(row))
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _meta_path(path: str) -> str:
    return path + ".meta.json"


def open_or_create(path: str, meta: StudyMeta) -> StudyHandle:
    """Open the shared study at `path`, creating journal + header under an
    exclusive lock if absent. Refuses to open when the on-disk meta
    (objective order, space digest) does not match."""
    handle = StudyHandle(path, meta)
    with handle._locked():
        mp = _meta_path(path)
        if os.path.exists(mp):
            with open(mp, encoding="utf-8") as fh:
                existing = StudyMeta.from_dict(json.load(fh))
            if existing != meta:
                raise StoreError(
                    f"study meta mismatch at {path}: journal was created "
                    f"with different objectives/space")
        else:
            with open(mp, "w", encoding="utf-8") as fh:
                json.dump(meta.to_dict(), fh, sort_keys=True)
                fh.flush()
                os.fsync(fh.fileno())
            # touch the journal so readers see a valid empty study
            with open(path, "a", encoding="utf-8"):
                pass
    return handle
