"""Counterfactual timing deduction with frozen network weights.

For a positive patient we ask which timings would have made the model call
them negative. The patient's ``tau`` row becomes the free variable; the
objective is ``BCE(p_positive, 0) + mu * ||tau' - tau||^2``. ``p_positive`` is
recomputed by moving each observed event's timing in the attention step by
``tau' - tau``, so at ``tau' = tau`` the trained prediction is reproduced
exactly.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .model import ModelParams, _forward_batch, attend, attend_backward, encode, make_batch
from .types import Cohort, EventSymbol, PatientRecord

DISPOSITIONS = ("unchanged", "postponed", "advanced", "canceled")


@dataclass(frozen=True)
class CfConfig:
    step_size: float = 0.05
    max_iters: int = 200
    target_p: float = 0.45
    mu: float = 0.1
    symbols_free: Optional[tuple[EventSymbol, ...]] = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not isinstance(self.max_iters, int) or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if not 0 < self.target_p <= 0.5:
            raise ValueError("target_p must lie in (0, 0.5]")
        if not self.mu >= 0:
            raise ValueError("mu must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.symbols_free is not None:
            d["symbols_free"] = [str(s) for s in self.symbols_free]
        return d


@dataclass
class CfEntry:
    patient_id: str
    vocabulary: tuple[EventSymbol, ...]
    tau: np.ndarray
    tau_cf: np.ndarray
    free: np.ndarray
    iterations: int
    initial_p: float
    final_p: float
    converged: bool
    aborted: bool = False
    halvings: int = 0
    objective_trace: list[float] = field(default_factory=list, repr=False)

    def shift(self, symbol: EventSymbol) -> float:
        j = self.vocabulary.index(symbol)
        return float(self.tau_cf[j] - self.tau[j])

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "tau": self.tau.tolist(),
            "tau_cf": self.tau_cf.tolist(),
            "iterations": self.iterations,
            "initial_p": self.initial_p,
            "final_p": self.final_p,
            "converged": self.converged,
            "aborted": self.aborted,
            "halvings": self.halvings,
        }


def select_cohort(run, cohort: Cohort, trajectory_filter: Sequence[EventSymbol] = ()) -> list[str]:
    """Positive patients who observed every filter symbol, in filter order."""
    in_run = set(run.patient_ids) if run is not None else None
    out = []
    for p in cohort.patients:
        if p.label != 1 or (in_run is not None and p.id not in in_run):
            continue
        order = {ev.symbol: i for i, ev in enumerate(p.sorted_events())}
        pos = [order.get(s) for s in trajectory_filter]
        if any(i is None for i in pos):
            continue
        if all(a < b for a, b in zip(pos, pos[1:])):
            out.append(p.id)
    return out


def _objective(P, e, mask, idx, tau_cf, tau0, free, mu, tau_attn):
    rows = np.arange(tau_cf.shape[0])[:, None]
    # the attention step sees the trained timing shifted by the counterfactual move
    tau_obs = tau_attn + (tau_cf - tau0)[rows, idx]
    a, ctx, dev, _ = attend(P, e, mask, tau_obs)
    u = ctx @ P.w_y + P.b_y
    diff = np.where(free, tau_cf - tau0, 0.0)
    obj = np.logaddexp(0.0, u) + mu * (diff * diff).sum(axis=1)
    return obj, expit(u), (a, ctx, dev)


def _gradient(P, e, mask, idx, tau_cf, tau0, free, mu, p, cache):
    a, ctx, dev = cache
    g_ctx = p[:, None] * P.w_y
    _, _, g_tau_obs = attend_backward(P, e, mask, a, dev, g_ctx)
    g = np.zeros_like(tau_cf)
    B = tau_cf.shape[0]
    rows = np.broadcast_to(np.arange(B)[:, None], idx.shape)
    np.add.at(g, (rows[mask], idx[mask]), g_tau_obs[mask])
    g = g + 2.0 * mu * (tau_cf - tau0)
    return np.where(free, g, 0.0)


def deduce_many(P: ModelParams, patients: Sequence[PatientRecord], cfg: CfConfig = CfConfig(),
                keep_trace: bool = False) -> list[CfEntry]:
    """Independent counterfactual optimisation for each patient; weights untouched."""
    if not patients:
        return []
    batch = make_batch(patients, P.index)
    c = _forward_batch(P, batch)
    tau0 = c["tau"].copy()
    tau_attn = c["tau0"]
    _, e = encode(P, batch)
    mask, idx = batch.mask, batch.idx
    V = len(P.vocabulary)
    if cfg.symbols_free is None:
        free_row = np.ones(V, dtype=bool)
    else:
        free_row = np.zeros(V, dtype=bool)
        index = P.index
        for s in cfg.symbols_free:
            if s not in index:
                raise KeyError(f"free symbol {s} not in vocabulary")
            free_row[index[s]] = True
    B = len(patients)
    free = np.broadcast_to(free_row, (B, V))

    tau_cf = tau0.copy()
    obj, p, cache = _objective(P, e, mask, idx, tau_cf, tau0, free, cfg.mu, tau_attn)
    initial_p = p.copy()
    step = np.full(B, cfg.step_size)
    iters = np.zeros(B, dtype=int)
    halvings = np.zeros(B, dtype=int)
    aborted = ~np.isfinite(obj)
    done = (p <= cfg.target_p) | aborted
    traces = [[float(o)] for o in obj] if keep_trace else None

    for _ in range(cfg.max_iters):
        active = ~done
        if not active.any():
            break
        g = _gradient(P, e, mask, idx, tau_cf, tau0, free, cfg.mu, p, cache)
        cand = np.where(active[:, None], tau_cf - step[:, None] * g, tau_cf)
        obj_new, p_new, cache_new = _objective(P, e, mask, idx, cand, tau0, free, cfg.mu, tau_attn)
        iters[active] += 1
        bad = active & ~(np.isfinite(obj_new) & np.all(np.isfinite(cand), axis=1))
        aborted |= bad
        worse = active & ~bad & (obj_new > obj)
        accept = active & ~bad & ~worse
        step[worse] *= 0.5
        halvings[worse] += 1
        tau_cf[accept] = cand[accept]
        obj[accept] = obj_new[accept]
        p[accept] = p_new[accept]
        a, ctx, dev = cache
        a_n, ctx_n, dev_n = cache_new
        cache = (
            np.where(accept[:, None], a_n, a),
            np.where(accept[:, None], ctx_n, ctx),
            np.where(accept[:, None], dev_n, dev),
        )
        if keep_trace:
            for b in np.flatnonzero(accept):
                traces[b].append(float(obj[b]))
        done |= aborted | (accept & (p <= cfg.target_p))

    return [
        CfEntry(
            patient_id=pt.id,
            vocabulary=P.vocabulary,
            tau=tau0[b].copy(),
            tau_cf=tau_cf[b].copy(),
            free=free_row.copy(),
            iterations=int(iters[b]),
            initial_p=float(initial_p[b]),
            final_p=float(p[b]),
            converged=bool(not aborted[b] and p[b] <= cfg.target_p),
            aborted=bool(aborted[b]),
            halvings=int(halvings[b]),
            objective_trace=traces[b] if keep_trace else [],
        )
        for b, pt in enumerate(patients)
    ]


def deduce(P: ModelParams, patient: PatientRecord, cfg: CfConfig = CfConfig(), keep_trace: bool = False) -> CfEntry:
    return deduce_many(P, [patient], cfg, keep_trace)[0]


def window_end(tau_row: np.ndarray, observed: Iterable[int]) -> float:
    """Latest observed tau plus the mean gap between adjacent observed taus.

    A single observed event falls back to a gap of 1.0.
    """
    vals = np.sort(np.asarray([tau_row[j] for j in observed], dtype=np.float64))
    if vals.size == 0:
        raise ValueError("patient has no observed symbols")
    gap = float(np.mean(np.diff(vals))) if vals.size > 1 else 1.0
    return float(vals[-1] + gap)


def default_shift_eps(tau_row: np.ndarray) -> float:
    q75, q25 = np.percentile(tau_row, [75, 25])
    return 0.05 * float(q75 - q25)


def classify_disposition(entry: CfEntry, patient: PatientRecord, shift_eps: Optional[float] = None) -> dict[EventSymbol, str]:
    """Label each free symbol unchanged, postponed, advanced or canceled."""
    index = {s: j for j, s in enumerate(entry.vocabulary)}
    observed = [index[s] for s in patient.symbols]
    t_end = window_end(entry.tau, observed)
    eps = default_shift_eps(entry.tau) if shift_eps is None else shift_eps
    out = {}
    for j, s in enumerate(entry.vocabulary):
        if not entry.free[j]:
            continue
        before, after = entry.tau[j], entry.tau_cf[j]
        delta = after - before
        if abs(delta) <= eps:
            out[s] = "unchanged"
        elif delta > 0:
            out[s] = "canceled" if after > t_end else "postponed"
        else:
            out[s] = "advanced"
    return out


@dataclass
class CfResult:
    config: CfConfig
    entries: list[CfEntry]
    dispositions: dict[str, dict[EventSymbol, str]]

    def paired(self, symbol: EventSymbol, converged_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
        rows = [e for e in self.entries if e.converged or not converged_only]
        if not rows:
            return np.empty(0), np.empty(0)
        j = rows[0].vocabulary.index(symbol)
        return np.array([e.tau[j] for e in rows]), np.array([e.tau_cf[j] for e in rows])

    def to_dict(self, extra: Optional[dict] = None) -> dict:
        vocab = self.entries[0].vocabulary if self.entries else ()
        per_symbol = {}
        for s in vocab:
            before, after = self.paired(s)
            per_symbol[str(s)] = {
                "tau": before.tolist(),
                "tau_cf": after.tolist(),
                "dispositions": [self.dispositions[e.patient_id].get(s) for e in self.entries],
            }
        out = {
            "config": self.config.to_dict(),
            "vocabulary": [str(s) for s in vocab],
            "patients": [
                {**e.to_dict(), "dispositions": {str(k): v for k, v in self.dispositions[e.patient_id].items()}}
                for e in self.entries
            ],
            "per_symbol": per_symbol,
        }
        if extra:
            out.update(extra)
        return out


def _deduce_chunk(args):
    P, patients, cfg = args
    return deduce_many(P, patients, cfg)


def run_counterfactual(P: ModelParams, cohort: Cohort, patient_ids: Sequence[str], cfg: CfConfig = CfConfig(),
                       shift_eps: Optional[float] = None, jobs: int = 1) -> CfResult:
    """Deduce every listed patient and classify the shifts.

    Patients are independent, so ``jobs > 1`` splits them into contiguous
    chunks handled by worker processes; entries come back in id order.
    """
    by_id = cohort.by_id()
    patients = [by_id[pid] for pid in sorted(patient_ids)]
    if jobs > 1 and len(patients) > 1:
        chunks = [c for c in np.array_split(np.arange(len(patients)), jobs) if c.size]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_deduce_chunk, [(P, [patients[i] for i in c], cfg) for c in chunks])
            entries = [e for part in parts for e in part]
    else:
        entries = deduce_many(P, patients, cfg)
    disp = {e.patient_id: classify_disposition(e, by_id[e.patient_id], shift_eps) for e in entries}
    return CfResult(cfg, entries, disp)


# -- density estimates ------------------------------------------------------------


class DegenerateKDE(ValueError):
    pass


def silverman_bandwidth(x: np.ndarray) -> float:
    sigma = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sigma, (q75 - q25) / 1.34)
    if spread <= 0:
        # an IQR of zero with nonzero variance still deserves a bandwidth
        spread = max(sigma, (q75 - q25) / 1.34)
    return 0.9 * spread * x.size ** (-0.2)


MAX_GRID_POINTS = 1 << 16


def kde(samples, bandwidth: Optional[float] = None, grid_points: int = 256):
    """Gaussian KDE on an evenly spaced grid spanning ``[min - 3h, max + 3h]``.

    The grid is refined beyond ``grid_points`` when its spacing would exceed
    ``h / 2``; coarser grids step over kernels and lose mass.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("kde needs at least 2 samples")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0 or not math.isfinite(h):
        raise DegenerateKDE("zero bandwidth: samples have no spread")
    lo, hi = x.min() - 3 * h, x.max() + 3 * h
    needed = math.ceil((hi - lo) / (0.5 * h)) + 1
    if needed > MAX_GRID_POINTS:
        raise DegenerateKDE(f"bandwidth {h:.3g} is too small for the sample range {hi - lo:.3g}")
    grid = np.linspace(lo, hi, max(grid_points, needed))
    density = np.empty_like(grid)
    norm_c = x.size * h * math.sqrt(2 * math.pi)
    for start in range(0, grid.size, 4096):
        zs = (grid[start:start + 4096, None] - x[None, :]) / h
        density[start:start + 4096] = np.exp(-0.5 * zs * zs).sum(axis=1) / norm_c
    return grid, density


def write_kde_csv(path, tau: np.ndarray, tau_cf: np.ndarray, grid_points: int = 256) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid", "density", "series"])
        for series, values in (("relative", tau), ("counterfactual", tau_cf)):
            grid, dens = kde(values, grid_points=grid_points)
            for g, d in zip(grid, dens):
                w.writerow([repr(float(g)), repr(float(d)), series])
