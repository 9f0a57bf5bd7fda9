"""Pathway discovery over timing-attention statistics.

Symbols that pass the attention and support thresholds become nodes of a
DAG ordered by mean ``tau``; an edge needs enough overlap between the two
symbols' core-candidate sets. Maximal paths are pathways, and pathways that
end at the same symbol form a cluster. No event-order rules are mined: all
symbols are scored at once and ordering comes from ``tau`` alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .attention import DegenerateSample, InsufficientSample, TimingAttentionStat, attention_stat, rank_by_attention
from .types import Cohort, EventSymbol

MAX_PATHS = 10_000
DEAD_BAND = 0.02


@dataclass(frozen=True)
class MinerParams:
    kappa_min: float = 2.0
    min_support: int = 20
    jaccard_min: float = 0.5
    c_mad: float = 3.0
    max_paths: int = MAX_PATHS

    def __post_init__(self):
        if not self.kappa_min > 0 or not self.min_support > 0 or not self.c_mad > 0:
            raise ValueError("kappa_min, min_support and c_mad must be positive")
        if not 0 < self.jaccard_min <= 1:
            raise ValueError("jaccard_min must lie in (0, 1]")


@dataclass
class TrajectoryStep:
    symbol: EventSymbol
    stat: TimingAttentionStat

    def to_dict(self) -> dict:
        d = self.stat.to_dict()
        d.pop("core_candidates")
        return d


@dataclass
class Pathway:
    steps: list[TrajectoryStep]
    running_cohort: frozenset[str]

    @property
    def symbols(self) -> list[EventSymbol]:
        return [s.symbol for s in self.steps]

    @property
    def terminal(self) -> EventSymbol:
        return self.steps[-1].symbol

    def to_dict(self) -> dict:
        return {
            "symbols": [str(s) for s in self.symbols],
            "steps": [s.to_dict() for s in self.steps],
            "running_cohort": sorted(self.running_cohort),
            "trend": p_pos_trend([s.stat.p_pos for s in self.steps]),
        }


@dataclass
class TrajectoryCluster:
    terminal: EventSymbol
    pathways: list[Pathway]

    @property
    def size(self) -> int:
        return sum(len(p.running_cohort) for p in self.pathways)

    def to_dict(self) -> dict:
        return {"terminal": str(self.terminal), "size": self.size, "pathways": [p.to_dict() for p in self.pathways]}


@dataclass
class MiningResult:
    pathways: list[Pathway]
    truncated: bool = False
    nodes: list[TimingAttentionStat] = field(default_factory=list)
    dropped: int = 0


def _jaccard(a: frozenset, b: frozenset) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def _transitive_reduction(nodes, succ):
    """Drop a->c whenever c is also reachable through another successor of a.

    A path using such a shortcut could be extended by the skipped symbols, so
    it is not maximal.
    """
    reach: dict = {}
    for n in reversed(nodes):  # nodes are in mean-tau order, sinks last
        r = set()
        for m in succ[n]:
            r.add(m)
            r |= reach[m]
        reach[n] = r
    reduced = {}
    for n in nodes:
        via = set()
        for m in succ[n]:
            via |= reach[m]
        reduced[n] = [m for m in succ[n] if m not in via]
    return reduced


def _maximal_paths(nodes, succ, pred, cap):
    """All source-to-sink paths in canonical order, at most ``cap`` of them."""
    paths, truncated = [], False
    sources = [n for n in nodes if not pred[n]]

    def walk(path):
        nonlocal truncated
        if len(paths) >= cap:
            truncated = True
            return
        tail = path[-1]
        if not succ[tail]:
            paths.append(list(path))
            return
        for nxt in succ[tail]:
            path.append(nxt)
            walk(path)
            path.pop()
            if truncated:
                return

    for s in sources:
        walk([s])
        if truncated:
            break
    return paths, truncated


def mine(run, cohort: Cohort, params: MinerParams = MinerParams()) -> MiningResult:
    ranking = rank_by_attention(run, cohort, c_mad=params.c_mad)
    nodes = sorted(
        (s for s in ranking.stats if s.kappa >= params.kappa_min and s.c_m >= params.min_support),
        key=lambda s: s.symbol,
    )
    syms = [s.symbol for s in nodes]
    stat = {s.symbol: s for s in nodes}
    succ = {s: [] for s in syms}
    pred = {s: [] for s in syms}
    for a in syms:
        for b in syms:
            if stat[a].mean_tau < stat[b].mean_tau and _jaccard(stat[a].core_candidates, stat[b].core_candidates) >= params.jaccard_min:
                succ[a].append(b)
                pred[b].append(a)
    by_tau = sorted(syms, key=lambda s: stat[s].mean_tau)
    succ = _transitive_reduction(by_tau, succ)
    pred = {s: [a for a in syms if s in succ[a]] for s in syms}
    raw, truncated = _maximal_paths(syms, succ, pred, params.max_paths)

    pathways, dropped = [], 0
    all_ids = list(run.patient_ids)
    for path in raw:
        running = frozenset(all_ids)
        steps = []
        ok = True
        for sym in path:
            try:
                st = attention_stat(run, sym, cohort, restrict=running, c_mad=params.c_mad)
            except (InsufficientSample, DegenerateSample):
                ok = False
                break
            running = running & st.core_candidates
            if st.c_m < params.min_support or (steps and not st.mean_tau > steps[-1].stat.mean_tau):
                ok = False
                break
            steps.append(TrajectoryStep(sym, st))
        if ok:
            pathways.append(Pathway(steps, running))
        else:
            dropped += 1
    return MiningResult(pathways, truncated, nodes, dropped)


def extract_pathways(run, cohort: Cohort, params: MinerParams = MinerParams()) -> list[Pathway]:
    return mine(run, cohort, params).pathways


def cluster_pathways(pathways) -> list[TrajectoryCluster]:
    groups: dict[EventSymbol, list[Pathway]] = {}
    for p in pathways:
        groups.setdefault(p.terminal, []).append(p)
    clusters = [TrajectoryCluster(t, ps) for t, ps in groups.items()]
    clusters.sort(key=lambda c: (-c.size, c.terminal))
    return clusters


def p_pos_trend(values, dead_band: float = DEAD_BAND) -> str:
    """Shape of a P+ sequence: flat, increasing, decreasing, peaked or mixed."""
    signs = []
    for a, b in zip(values, values[1:]):
        d = b - a
        if abs(d) > dead_band:
            signs.append(1 if d > 0 else -1)
    if not signs:
        return "flat"
    if all(s > 0 for s in signs):
        return "increasing"
    if all(s < 0 for s in signs):
        return "decreasing"
    changes = [i for i in range(1, len(signs)) if signs[i] != signs[i - 1]]
    if len(changes) == 1 and signs[0] > 0:
        return "peaked"
    return "mixed"


def step_profile(pathway: Pathway) -> dict:
    rows = [
        {"symbol": str(s.symbol), "kappa": s.stat.kappa, "c_m": s.stat.c_m, "c_t": s.stat.c_t, "p_pos": s.stat.p_pos}
        for s in pathway.steps
    ]
    return {"rows": rows, "trend": p_pos_trend([r["p_pos"] for r in rows])}


def to_json(result: MiningResult, clusters: list[TrajectoryCluster], extra: dict | None = None) -> str:
    doc = {
        "truncated": result.truncated,
        "dropped_paths": result.dropped,
        "nodes": [{k: v for k, v in s.to_dict().items() if k != "core_candidates"} for s in result.nodes],
        "clusters": [c.to_dict() for c in clusters],
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2) + "\n"


def _node_label(step: TrajectoryStep) -> str:
    st = step.stat
    return f"{step.symbol}\\nκ={st.kappa:.2f} C_M={st.c_m} C_T={st.c_t} P+={st.p_pos:.2f}"


def to_dot(clusters: list[TrajectoryCluster]) -> str:
    """One digraph per cluster; the shared terminal is drawn once."""
    out = []
    for ci, cl in enumerate(clusters):
        out.append(f'digraph cluster_{ci} {{')
        out.append(f'  label="{cl.terminal}";')
        term = f"t_{cl.terminal}"
        last = cl.pathways[0].steps[-1]
        out.append(f'  "{term}" [label="{_node_label(last)}"];')
        for pi, p in enumerate(cl.pathways):
            names = [f"p{pi}_{s.symbol}" for s in p.steps[:-1]] + [term]
            for name, step in zip(names[:-1], p.steps[:-1]):
                out.append(f'  "{name}" [label="{_node_label(step)}"];')
            for a, b in zip(names, names[1:]):
                out.append(f'  "{a}" -> "{b}";')
        out.append("}")
    return "\n".join(out) + "\n"
