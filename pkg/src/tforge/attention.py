"""Timing attention: how concentrated a symbol's timing is across patients.

Concentration is Pearson kurtosis of the per-patient ``tau`` sample. The
core candidates of a symbol are the patients whose ``tau`` lies within
``c_mad`` median absolute deviations of the median.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .types import Cohort, EventSymbol


class InsufficientSample(ValueError):
    pass


class DegenerateSample(ValueError):
    pass


def kurtosis(samples) -> float:
    """Pearson kurtosis ``m4 / m2**2`` with central moments divided by n."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 4:
        raise InsufficientSample(f"kurtosis needs at least 4 samples, got {x.size}")
    dev = x - x.mean()
    m2 = np.mean(dev**2)
    # relative to the data scale so that rounding noise on a constant sample is still caught
    scale = max(np.max(np.abs(x)), np.finfo(float).tiny)
    if m2 <= (1e-14 * scale) ** 2:
        raise DegenerateSample("sample has zero variance")
    m4 = np.mean(dev**4)
    return float(m4 / (m2 * m2))


def core_mask(samples, c_mad: float = 3.0) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    return np.abs(x - med) <= c_mad * mad


@dataclass
class TimingAttentionStat:
    symbol: EventSymbol
    n: int
    mean_tau: float
    kappa: float
    core_candidates: frozenset[str]
    c_m: int
    c_t: int
    p_pos: float

    def to_dict(self) -> dict:
        return {
            "symbol": str(self.symbol),
            "n": self.n,
            "mean_tau": self.mean_tau,
            "kappa": self.kappa,
            "c_m": self.c_m,
            "c_t": self.c_t,
            "p_pos": self.p_pos,
            "core_candidates": sorted(self.core_candidates),
        }


@dataclass
class TauView:
    """The per-run pieces attention statistics need: a dense TauMap plus ids."""

    patient_ids: list[str]
    vocabulary: tuple[EventSymbol, ...]
    tau: np.ndarray

    def column(self, symbol: EventSymbol) -> np.ndarray:
        try:
            j = self.vocabulary.index(symbol)
        except ValueError:
            raise KeyError(f"symbol {symbol} not in vocabulary") from None
        return self.tau[:, j]


def _tau_view(run) -> TauView:
    if isinstance(run, TauView):
        return run
    return TauView(list(run.patient_ids), tuple(run.vocabulary), np.asarray(run.tau))


def attention_stat(
    run,
    symbol: EventSymbol,
    cohort: Cohort,
    restrict: Optional[Iterable[str]] = None,
    c_mad: float = 3.0,
) -> TimingAttentionStat:
    """Kurtosis over the (restricted) cohort and counts over its core candidates."""
    view = _tau_view(run)
    col = view.column(symbol)
    pos = {pid: i for i, pid in enumerate(view.patient_ids)}
    # id order rather than storage order so the floating-point sums are reproducible
    if restrict is None:
        ids = sorted(view.patient_ids)
    else:
        wanted = set(restrict)
        if not wanted:
            raise ValueError("restriction set is empty")
        unknown = wanted - pos.keys()
        if unknown:
            raise KeyError(f"unknown patient ids: {sorted(unknown)[:5]}")
        ids = sorted(wanted)
    samples = col[[pos[pid] for pid in ids]]
    kappa = kurtosis(samples)
    keep = core_mask(samples, c_mad)
    core = [pid for pid, k in zip(ids, keep) if k]
    patients = cohort.by_id()
    c_t = sum(1 for pid in core if patients[pid].day_of(symbol) is not None)
    n_pos = sum(patients[pid].label for pid in core)
    return TimingAttentionStat(
        symbol=symbol,
        n=len(ids),
        mean_tau=float(samples.mean()),
        kappa=kappa,
        core_candidates=frozenset(core),
        c_m=len(core),
        c_t=c_t,
        p_pos=n_pos / len(core) if core else 0.0,
    )


@dataclass
class AttentionRanking:
    stats: list[TimingAttentionStat]
    omitted: list[tuple[EventSymbol, str]] = field(default_factory=list)

    def rank_of(self, symbol: EventSymbol) -> Optional[int]:
        """1-based rank of ``symbol``, or None when it was omitted."""
        for i, s in enumerate(self.stats, start=1):
            if s.symbol == symbol:
                return i
        return None

    def to_dict(self) -> dict:
        return {
            "stats": [s.to_dict() for s in self.stats],
            "omitted": [{"symbol": str(s), "reason": r} for s, r in self.omitted],
        }


def rank_by_attention(run, cohort: Cohort, restrict=None, c_mad: float = 3.0) -> AttentionRanking:
    """All symbols sorted by kappa descending; degenerate ones reported in ``omitted``."""
    view = _tau_view(run)
    stats, omitted = [], []
    for sym in sorted(view.vocabulary):
        try:
            stats.append(attention_stat(view, sym, cohort, restrict, c_mad))
        except (InsufficientSample, DegenerateSample) as exc:
            omitted.append((sym, str(exc)))
    # stable sort over canonical order keeps ties in symbol order
    stats.sort(key=lambda s: -s.kappa)
    return AttentionRanking(stats, omitted)
