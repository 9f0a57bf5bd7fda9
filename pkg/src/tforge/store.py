"""Possibility ensembles: K independently seeded training runs on disk.

Layout::

    <dir>/manifest.json   {"cohort_sha256", "config_sha256", "k", "base_seed"}
    <dir>/run_<k>.json    one trained-run artifact per run

Queries only ever compare values inside a single run and then aggregate the
per-run answers, since ``tau`` carries no meaning across runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ModelConfig, ModelParams, TrainingDiverged, TrainResult, train, with_seed
from .types import Cohort, EventSymbol, PossibilityY, dumps_cohort

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class StoreMismatch(RuntimeError):
    """Resume attempted against a store built from a different cohort/config."""


class EnsembleDiverged(RuntimeError):
    def __init__(self, store, diverged: dict[int, TrainingDiverged]):
        ids = ", ".join(str(k) for k in sorted(diverged))
        super().__init__(f"runs diverged: {ids}")
        self.store = store
        self.diverged = diverged


def cohort_sha256(cohort: Cohort) -> str:
    return hashlib.sha256(dumps_cohort(cohort).encode("utf-8")).hexdigest()


def config_sha256(config: ModelConfig) -> str:
    d = config.to_dict()
    d.pop("seed")  # runs differ only by seed
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass
class RunRecord:
    run_id: int
    seed: int
    patient_ids: list[str]
    vocabulary: tuple[EventSymbol, ...]
    tau: np.ndarray
    p_positive: np.ndarray
    t_hat: np.ndarray
    final_loss: float = float("nan")
    loss_curve: list[float] = field(default_factory=list)
    config: Optional[dict] = None
    params: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    def _row(self, patient_id: str) -> int:
        try:
            return self.patient_ids.index(patient_id)
        except ValueError:
            raise KeyError(f"unknown patient {patient_id!r}") from None

    def _col(self, symbol: EventSymbol) -> int:
        try:
            return self.vocabulary.index(symbol)
        except ValueError:
            raise KeyError(f"unknown symbol {symbol}") from None

    def tau_of(self, symbol: EventSymbol, patient_id: str) -> float:
        return float(self.tau[self._row(patient_id), self._col(symbol)])

    def outcome(self, patient_id: str) -> PossibilityY:
        i = self._row(patient_id)
        return PossibilityY(float(self.p_positive[i]), float(self.t_hat[i]))

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.config)

    def model_params(self) -> ModelParams:
        if self.params is None:
            raise ValueError(f"run {self.run_id} carries no parameters")
        return ModelParams.from_dict(self.params, self.model_config())

    @classmethod
    def from_train(cls, run_id: int, result: TrainResult) -> "RunRecord":
        P = result.params
        return cls(
            run_id=run_id,
            seed=P.config.seed,
            patient_ids=list(result.patient_ids),
            vocabulary=P.vocabulary,
            tau=result.tau,
            p_positive=np.array([o.p_positive for o in result.outcomes]),
            t_hat=np.array([o.t_hat for o in result.outcomes]),
            final_loss=result.final_loss,
            loss_curve=list(result.loss_curve),
            config=P.config.to_dict(),
            params=P.to_dict(),
        )

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "seed": self.seed,
            "config": self.config,
            "final_loss": self.final_loss,
            "loss_curve": self.loss_curve,
            "outcomes": {
                pid: {"p_positive": float(p), "t_hat": float(t)}
                for pid, p, t in zip(self.patient_ids, self.p_positive, self.t_hat)
            },
            "tau_map": {
                "rows": list(self.patient_ids),
                "columns": [str(s) for s in self.vocabulary],
                "values": self.tau.tolist(),
            },
            "params": self.params,
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        tm = d["tau_map"]
        rows = list(tm["rows"])
        outcomes = d["outcomes"]
        known = {"run_id", "seed", "config", "final_loss", "loss_curve", "outcomes", "tau_map", "params"}
        return cls(
            run_id=int(d["run_id"]),
            seed=int(d["seed"]),
            patient_ids=rows,
            vocabulary=tuple(EventSymbol.parse(s) for s in tm["columns"]),
            tau=np.asarray(tm["values"], dtype=np.float64).reshape(len(rows), len(tm["columns"])),
            p_positive=np.array([outcomes[pid]["p_positive"] for pid in rows], dtype=np.float64),
            t_hat=np.array([outcomes[pid]["t_hat"] for pid in rows], dtype=np.float64),
            final_loss=d.get("final_loss", float("nan")),
            loss_curve=list(d.get("loss_curve", [])),
            config=d.get("config"),
            params=d.get("params"),
            extra={k: v for k, v in d.items() if k not in known},
        )


def _dump(obj) -> bytes:
    return (json.dumps(obj, sort_keys=False, allow_nan=True) + "\n").encode("utf-8")


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class PossibilityStore:
    """A set of runs, optionally backed by a directory."""

    def __init__(self, runs=(), manifest: Optional[dict] = None, directory=None):
        self.runs: dict[int, RunRecord] = {r.run_id: r for r in runs}
        self.manifest = dict(manifest or {})
        self.directory = Path(directory) if directory is not None else None

    def __len__(self) -> int:
        return len(self.runs)

    @property
    def run_ids(self) -> list[int]:
        return sorted(self.runs)

    def ordered_runs(self) -> list[RunRecord]:
        return [self.runs[k] for k in self.run_ids]

    def add(self, record: RunRecord) -> None:
        if record.run_id in self.runs:
            raise ValueError(f"run_id {record.run_id} already present")
        self.runs[record.run_id] = record
        if self.directory is not None:
            _write_atomic(self.directory / f"run_{record.run_id}.json", _dump(record.to_dict()))

    def run(self, run_id: int) -> RunRecord:
        try:
            return self.runs[run_id]
        except KeyError:
            raise KeyError(f"run {run_id} not in store (available: {self.run_ids})") from None

    @classmethod
    def load(cls, directory) -> "PossibilityStore":
        directory = Path(directory)
        mpath = directory / MANIFEST
        if not mpath.exists():
            raise FileNotFoundError(f"no {MANIFEST} in {directory}")
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        runs = []
        for path in sorted(directory.glob("run_*.json")):
            runs.append(RunRecord.from_dict(json.loads(path.read_text(encoding="utf-8"))))
        return cls(runs, manifest, directory)

    # -- queries --

    def _require(self):
        if not self.runs:
            raise ValueError("store is empty")

    def outcome_distribution(self, patient_id: str) -> dict:
        """Per-run ``(p_positive, t_hat)`` plus population mean and std of each."""
        self._require()
        pts = [r.outcome(patient_id) for r in self.ordered_runs()]
        p = np.array([o.p_positive for o in pts])
        t = np.array([o.t_hat for o in pts])
        return {
            "samples": pts,
            "p_mean": float(p.mean()),
            "p_std": float(p.std()),
            "t_mean": float(t.mean()),
            "t_std": float(t.std()),
        }

    def across_possibility_compare(self, symbol: EventSymbol, patient_a: str, patient_b: str) -> float:
        """Fraction of runs where ``tau(symbol, a) < tau(symbol, b)``; ties count 1/2."""
        self._require()
        score = 0.0
        for r in self.ordered_runs():
            ta, tb = r.tau_of(symbol, patient_a), r.tau_of(symbol, patient_b)
            score += 1.0 if ta < tb else 0.5 if ta == tb else 0.0
        return score / len(self.runs)

    def survival_style_onset_compare(self, patient_a: str, patient_b: str) -> float:
        """Fraction of runs predicting a later onset for ``a`` than for ``b``; ties count 1/2."""
        self._require()
        score = 0.0
        for r in self.ordered_runs():
            ta, tb = r.outcome(patient_a).t_hat, r.outcome(patient_b).t_hat
            score += 1.0 if ta > tb else 0.5 if ta == tb else 0.0
        return score / len(self.runs)

    def mean_tau_matrix(self) -> tuple[tuple[EventSymbol, ...], np.ndarray]:
        """Per-run, per-symbol mean tau over patients: (vocabulary, K x V)."""
        self._require()
        runs = self.ordered_runs()
        vocab = runs[0].vocabulary
        return vocab, np.stack([r.tau.mean(axis=0) for r in runs])


def _train_one(args):
    config, cohort, run_id = args
    try:
        return RunRecord.from_train(run_id, train(config, cohort))
    except TrainingDiverged as exc:
        return run_id, exc


def run_ensemble(
    config: ModelConfig,
    cohort: Cohort,
    k: int,
    base_seed: int,
    directory=None,
    jobs: int = 1,
) -> PossibilityStore:
    """Train runs ``0..k-1`` with seeds ``base_seed + run_id``.

    With a directory, each run is written as it completes and existing runs
    are skipped on resume. A store built from another cohort, config or base
    seed is refused.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    manifest = {
        "cohort_sha256": cohort_sha256(cohort),
        "config_sha256": config_sha256(config),
        "k": k,
        "base_seed": base_seed,
    }
    if directory is None:
        store = PossibilityStore(manifest=manifest)
    else:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if (directory / MANIFEST).exists():
            store = PossibilityStore.load(directory)
            old = store.manifest
            for key in ("cohort_sha256", "config_sha256", "base_seed"):
                if old.get(key) != manifest[key]:
                    raise StoreMismatch(f"{key} mismatch: store has {old.get(key)}, requested {manifest[key]}")
            manifest["k"] = max(k, int(old.get("k", 0)))
        else:
            store = PossibilityStore(directory=directory)
        store.manifest = manifest
        _write_atomic(directory / MANIFEST, _dump(manifest))

    todo = [rid for rid in range(k) if rid not in store.runs]
    store.new_runs = list(todo)
    jobs_args = [(with_seed(config, base_seed + rid), cohort, rid) for rid in todo]
    if jobs > 1 and len(jobs_args) > 1:
        pool = ProcessPoolExecutor(max_workers=jobs)
        results = pool.map(_train_one, jobs_args)
    else:
        pool = None
        results = map(_train_one, jobs_args)
    diverged = {}
    try:
        for record in results:
            if isinstance(record, tuple):
                rid, exc = record
                diverged[rid] = exc
                log.warning("run %d diverged: %s", rid, exc)
                continue
            store.add(record)
            log.info("run %d done, final loss %.6f", record.run_id, record.final_loss)
    finally:
        if pool is not None:
            pool.shutdown()
    if diverged:
        raise EnsembleDiverged(store, diverged)
    return store
