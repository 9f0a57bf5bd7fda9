"""Synthetic cohorts with planted trajectory templates and a planted timing rule.

The generator stands in for private EHR data: every patient follows one
template, optional noise events are sprinkled in, and the outcome label
depends only on how early the decisive event happened.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .types import (
    Cohort,
    EventInstance,
    EventSymbol,
    PatientRecord,
    dumps_cohort,
    patient_from_dict,
    post_onset_warnings,
    validate_cohort,
)


class SpecError(ValueError):
    """A GenSpec violates one of its invariants."""


class CohortFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TemplateStep:
    symbol: EventSymbol
    mean_gap_days: float
    gap_jitter_days: float = 0.0


@dataclass(frozen=True)
class TrajectoryTemplate:
    steps: tuple[TemplateStep, ...]
    prevalence: float
    skip_prob: float = 0.0

    @property
    def symbols(self) -> list[EventSymbol]:
        return [s.symbol for s in self.steps]


@dataclass(frozen=True)
class CausalTimingRule:
    decisive_symbol: EventSymbol
    threshold_day: float
    p_pos_if_early: float
    p_pos_if_late_or_absent: float


@dataclass(frozen=True)
class GenSpec:
    n_patients: int
    templates: tuple[TrajectoryTemplate, ...]
    rule: CausalTimingRule
    window_days: float
    noise_symbols: tuple[tuple[EventSymbol, float], ...] = ()
    seed: int = 0

    def validate(self) -> None:
        """Raise :class:`SpecError` naming the first violated invariant."""
        if not isinstance(self.n_patients, int) or self.n_patients < 1:
            raise SpecError(f"n_patients must be >= 1, got {self.n_patients}")
        if not self.window_days > 0:
            raise SpecError(f"window_days must be > 0, got {self.window_days}")
        if not 0 <= self.seed < 2**64:
            raise SpecError("seed must be a 64-bit unsigned integer")
        if not self.templates:
            raise SpecError("at least one template is required")
        for k, t in enumerate(self.templates):
            if not t.steps:
                raise SpecError(f"template {k} has no steps")
            if not 0.0 <= t.prevalence <= 1.0:
                raise SpecError(f"template {k}: prevalence must lie in [0, 1]")
            if not 0.0 <= t.skip_prob < 1.0:
                raise SpecError(f"template {k}: skip_prob must lie in [0, 1)")
            syms = t.symbols
            if len(set(syms)) != len(syms):
                raise SpecError(f"template {k}: repeated symbol")
            for s in t.steps:
                if not s.mean_gap_days > 0:
                    raise SpecError(f"template {k}: mean_gap_days must be positive")
                if not s.gap_jitter_days >= 0:
                    raise SpecError(f"template {k}: gap_jitter_days must be non-negative")
            last = {}
            for s in syms:
                if s.kind in last and s.ordinal <= last[s.kind]:
                    raise SpecError(f"template {k}: ordinals of {s.kind} must increase along steps")
                last[s.kind] = s.ordinal
        total = sum(t.prevalence for t in self.templates)
        if abs(total - 1.0) > 1e-9:
            raise SpecError(f"template prevalences must sum to 1 (+/- 1e-9), got {total!r}")
        r = self.rule
        if not r.threshold_day > 0:
            raise SpecError("rule.threshold_day must be positive")
        for name in ("p_pos_if_early", "p_pos_if_late_or_absent"):
            if not 0.0 <= getattr(r, name) <= 1.0:
                raise SpecError(f"rule.{name} must lie in [0, 1]")
        if not r.p_pos_if_early > r.p_pos_if_late_or_absent:
            raise SpecError("rule must be informative: p_pos_if_early > p_pos_if_late_or_absent")
        template_kinds = {s.kind for t in self.templates for s in t.symbols}
        noise_kinds = [sym.kind for sym, _ in self.noise_symbols]
        if len(set(noise_kinds)) != len(noise_kinds):
            raise SpecError("noise symbols must have distinct kinds")
        for sym, prob in self.noise_symbols:
            if not 0.0 <= prob <= 1.0:
                raise SpecError(f"noise symbol {sym}: occurrence_prob must lie in [0, 1]")
            if sym.kind in template_kinds:
                raise SpecError(f"noise symbol kind {sym.kind} also appears in a template")


def _patient_id(i: int, n: int) -> str:
    return f"p{i:0{max(4, len(str(n)))}d}"


def _sample(spec: GenSpec):
    """Yield (patient, template index, decisive day, branch) for every patient."""
    rng = np.random.default_rng(spec.seed)
    prev = np.array([t.prevalence for t in spec.templates])
    prev = prev / prev.sum()
    W = float(spec.window_days)
    rule = spec.rule
    for i in range(spec.n_patients):
        k = int(rng.choice(len(spec.templates), p=prev))
        tmpl = spec.templates[k]
        events = []
        t = 0.0
        for step in tmpl.steps:
            gap = step.mean_gap_days + step.gap_jitter_days * rng.standard_normal()
            t = t + max(gap, 0.0)
            skipped = rng.random() < tmpl.skip_prob
            if not skipped:
                events.append(EventInstance(step.symbol, float(min(max(t, 0.0), W))))
        # clipping can collapse days onto the window edge; keep kind ordinals strictly ordered
        events = _dedupe_clipped(events)
        for sym, prob in spec.noise_symbols:
            if rng.random() < prob:
                events.append(EventInstance(sym, float(rng.uniform(0.0, W))))
        dec_day = next((e.day for e in events if e.symbol == rule.decisive_symbol), None)
        early = dec_day is not None and dec_day < rule.threshold_day
        p = rule.p_pos_if_early if early else rule.p_pos_if_late_or_absent
        label = int(rng.random() < p)
        onset = None
        if label:
            last = max((e.day for e in events), default=0.0)
            onset = float(rng.uniform(last, W))
        patient = PatientRecord.build(_patient_id(i, spec.n_patients), events, label, W, onset)
        yield patient, k, dec_day, "early" if early else "late_or_absent"


def _dedupe_clipped(events):
    out = []
    last_day = {}
    for e in events:
        kind = e.symbol.kind
        if kind in last_day and e.day <= last_day[kind]:
            continue
        last_day[kind] = e.day
        out.append(e)
    return out


def generate_cohort(spec: GenSpec) -> Cohort:
    """Sample a cohort; a pure function of ``spec`` including its seed."""
    spec.validate()
    return Cohort.from_patients(p for p, *_ in _sample(spec))


def ground_truth_manifest(spec: GenSpec, cohort: Cohort) -> list[dict]:
    """Per-patient template id, decisive-event day and rule branch.

    The generator is replayed from the spec, so this is only meaningful for a
    cohort that ``generate_cohort(spec)`` produced.
    """
    spec.validate()
    rows = []
    ids = cohort.ids
    for j, (patient, k, dec_day, branch) in enumerate(_sample(spec)):
        if j >= len(ids) or ids[j] != patient.id:
            raise ValueError("cohort was not produced from this spec")
        rows.append({"id": patient.id, "template": k, "decisive_day": dec_day, "branch": branch})
    if len(rows) != len(ids):
        raise ValueError("cohort was not produced from this spec")
    return rows


# -- files ------------------------------------------------------------------


def save_cohort(cohort: Cohort, path) -> None:
    Path(path).write_bytes(dumps_cohort(cohort).encode("utf-8"))


def load_cohort(path, warnings: list | None = None) -> Cohort:
    """Read and validate a JSONL cohort file.

    Post-onset events are not errors; they are appended to ``warnings`` when a
    list is supplied.
    """
    patients = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                patients.append(patient_from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise CohortFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            except KeyError as exc:
                raise CohortFormatError(f"line {lineno}: missing field {exc.args[0]!r}") from exc
            except (TypeError, ValueError) as exc:
                raise CohortFormatError(f"line {lineno}: {exc}") from exc
    cohort = Cohort.from_patients(patients)
    problems = validate_cohort(cohort)
    if problems:
        raise CohortFormatError("invalid cohort:\n" + "\n".join(str(v) for v in problems))
    if warnings is not None:
        warnings.extend(post_onset_warnings(cohort))
    return cohort


def save_manifest(rows: list[dict], path) -> None:
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


def spec_to_dict(spec: GenSpec) -> dict:
    return {
        "n_patients": spec.n_patients,
        "window_days": spec.window_days,
        "seed": spec.seed,
        "rule": {
            "decisive_symbol": str(spec.rule.decisive_symbol),
            "threshold_day": spec.rule.threshold_day,
            "p_pos_if_early": spec.rule.p_pos_if_early,
            "p_pos_if_late_or_absent": spec.rule.p_pos_if_late_or_absent,
        },
        "templates": [
            {
                "prevalence": t.prevalence,
                "skip_prob": t.skip_prob,
                "steps": [
                    {"symbol": str(s.symbol), "mean_gap_days": s.mean_gap_days, "gap_jitter_days": s.gap_jitter_days}
                    for s in t.steps
                ],
            }
            for t in spec.templates
        ],
        "noise_symbols": [{"symbol": str(s), "occurrence_prob": p} for s, p in spec.noise_symbols],
    }


def spec_from_dict(d: dict) -> GenSpec:
    try:
        r = d["rule"]
        rule = CausalTimingRule(
            EventSymbol.parse(r["decisive_symbol"]),
            float(r["threshold_day"]),
            float(r["p_pos_if_early"]),
            float(r["p_pos_if_late_or_absent"]),
        )
        templates = tuple(
            TrajectoryTemplate(
                steps=tuple(
                    TemplateStep(EventSymbol.parse(s["symbol"]), float(s["mean_gap_days"]), float(s.get("gap_jitter_days", 0.0)))
                    for s in t["steps"]
                ),
                prevalence=float(t["prevalence"]),
                skip_prob=float(t.get("skip_prob", 0.0)),
            )
            for t in d["templates"]
        )
        noise = tuple((EventSymbol.parse(n["symbol"]), float(n["occurrence_prob"])) for n in d.get("noise_symbols", []))
        return GenSpec(
            n_patients=int(d["n_patients"]),
            templates=templates,
            rule=rule,
            window_days=float(d["window_days"]),
            noise_symbols=noise,
            seed=int(d.get("seed", 0)),
        )
    except KeyError as exc:
        raise SpecError(f"missing field {exc.args[0]!r}") from exc


def load_spec(path) -> GenSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def save_spec(spec: GenSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n", encoding="utf-8")


# -- reference setup ----------------------------------------------------------


def _sym(text: str) -> EventSymbol:
    return EventSymbol.parse(text)


def reference_spec(n_patients: int = 500, jitter: float = 1.0, seed: int = 7) -> GenSpec:
    """Desk-scale planted cohort: three regimens over the same five events.

    The templates differ in the order of the radiation step and in their
    pacing, and all end at the decisive event ``Target_3``, whose arrival
    day straddles the rule threshold. Four outcome-independent noise events
    each occur with probability 0.6. ``jitter`` scales every gap jitter;
    ``jitter=0`` gives noise-free template timing.
    """

    def steps(*rows):
        return tuple(TemplateStep(_sym(s), float(g), float(j) * jitter) for s, g, j in rows)

    templates = (
        # chemotherapy first, radiation after
        TrajectoryTemplate(
            steps(("Chemo_1", 20, 4), ("Chemo_2", 21, 4), ("Chemo_3", 21, 4), ("Radia_1", 30, 5), ("Target_3", 60, 40)),
            prevalence=0.40,
            skip_prob=0.05,
        ),
        # radiation first
        TrajectoryTemplate(
            steps(("Radia_1", 20, 4), ("Chemo_1", 25, 4), ("Chemo_2", 21, 4), ("Chemo_3", 21, 4), ("Target_3", 50, 40)),
            prevalence=0.35,
            skip_prob=0.05,
        ),
        # radiation between the first two chemotherapy cycles
        TrajectoryTemplate(
            steps(("Chemo_1", 20, 4), ("Radia_1", 25, 4), ("Chemo_2", 21, 4), ("Chemo_3", 21, 4), ("Target_3", 50, 40)),
            prevalence=0.25,
            skip_prob=0.05,
        ),
    )
    noise = tuple((_sym(s), 0.6) for s in ("Echo_1", "Lab_1", "Statin_1", "Visit_1"))
    rule = CausalTimingRule(_sym("Target_3"), threshold_day=160.0, p_pos_if_early=0.8, p_pos_if_late_or_absent=0.2)
    return GenSpec(n_patients, templates, rule, window_days=730.0, noise_symbols=noise, seed=seed)
