"""Event, patient and cohort value types plus their JSONL wire format."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

_KIND_RE = re.compile(r"^[A-Za-z][A-Za-z0-9]*(?:_[A-Za-z][A-Za-z0-9]*)*$")
_ORDINAL_RE = re.compile(r"^[1-9][0-9]*$")


class SymbolError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class EventSymbol:
    """An event kind plus its administration index, rendered ``<kind>_<ordinal>``.

    Ordering is by ``(kind, ordinal)``; this is the canonical symbol order used
    for tie-breaks everywhere in the package.
    """

    kind: str
    ordinal: int

    def __post_init__(self):
        if not isinstance(self.kind, str) or not _KIND_RE.match(self.kind):
            raise SymbolError(f"invalid event kind {self.kind!r}")
        if isinstance(self.ordinal, bool) or not isinstance(self.ordinal, int) or self.ordinal < 1:
            raise SymbolError(f"ordinal must be an integer >= 1, got {self.ordinal!r}")

    def __str__(self) -> str:
        return f"{self.kind}_{self.ordinal}"

    @classmethod
    def parse(cls, text: str) -> "EventSymbol":
        kind, sep, ordinal = text.rpartition("_")
        if not sep or not _ORDINAL_RE.match(ordinal):
            raise SymbolError(f"cannot parse event symbol {text!r}")
        return cls(kind, int(ordinal))


def canonical_symbol(kind: str, ordinal: int) -> EventSymbol:
    return EventSymbol(kind, ordinal)


@dataclass(frozen=True)
class EventInstance:
    symbol: EventSymbol
    day: float


def _event_key(ev: EventInstance):
    return (ev.day, ev.symbol)


@dataclass(frozen=True)
class PatientRecord:
    id: str
    events: tuple[EventInstance, ...]
    label: int
    window_days: float
    onset_day: Optional[float] = None

    @classmethod
    def build(cls, id, events: Iterable[EventInstance], label, window_days, onset_day=None):
        """Construct with events sorted by day, ties broken by canonical symbol order."""
        return cls(
            id=id,
            events=tuple(sorted(events, key=_event_key)),
            label=label,
            window_days=window_days,
            onset_day=onset_day,
        )

    @property
    def symbols(self) -> list[EventSymbol]:
        return [ev.symbol for ev in self.events]

    def day_of(self, symbol: EventSymbol) -> Optional[float]:
        for ev in self.events:
            if ev.symbol == symbol:
                return ev.day
        return None

    def sorted_events(self) -> tuple[EventInstance, ...]:
        return tuple(sorted(self.events, key=_event_key))


@dataclass(frozen=True)
class Cohort:
    patients: tuple[PatientRecord, ...]
    vocabulary: tuple[EventSymbol, ...] = field(default=())

    @classmethod
    def from_patients(cls, patients: Iterable[PatientRecord]) -> "Cohort":
        patients = tuple(patients)
        vocab = sorted({ev.symbol for p in patients for ev in p.events})
        return cls(patients=patients, vocabulary=tuple(vocab))

    def __len__(self) -> int:
        return len(self.patients)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.patients]

    def by_id(self) -> dict[str, PatientRecord]:
        return {p.id: p for p in self.patients}


@dataclass(frozen=True)
class PossibilityX:
    """An input event placed on the model's virtual timeline."""

    symbol: EventSymbol
    tau: float

    def __post_init__(self):
        if not math.isfinite(self.tau):
            raise ValueError("tau must be finite")


@dataclass(frozen=True)
class PossibilityY:
    """One instantiated outcome: probability of a positive label and normalized onset timing."""

    p_positive: float
    t_hat: float

    def __post_init__(self):
        if not 0.0 <= self.p_positive <= 1.0:
            raise ValueError(f"p_positive must lie in [0, 1], got {self.p_positive}")


@dataclass(frozen=True)
class Violation:
    patient_id: Optional[str]
    path: str
    message: str

    def __str__(self) -> str:
        who = self.patient_id if self.patient_id is not None else "<cohort>"
        return f"{who}: {self.path}: {self.message}"


def _is_real(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_patient(p: PatientRecord) -> list[Violation]:
    out = []

    def bad(path, msg):
        out.append(Violation(p.id, path, msg))

    if not _is_real(p.window_days) or p.window_days <= 0:
        bad("window_days", f"must be a positive real, got {p.window_days!r}")
        window = math.inf
    else:
        window = p.window_days
    if p.label not in (0, 1) or isinstance(p.label, bool):
        bad("label", f"must be 0 or 1, got {p.label!r}")
    if p.label == 1 and p.onset_day is None:
        bad("onset_day", "missing for a positive patient")
    if p.label == 0 and p.onset_day is not None:
        bad("onset_day", "present for a negative patient")
    if p.onset_day is not None:
        if not _is_real(p.onset_day) or p.onset_day < 0:
            bad("onset_day", f"must be a non-negative real, got {p.onset_day!r}")
        elif p.onset_day > window:
            bad("onset_day", f"{p.onset_day} exceeds window {window}")

    seen = set()
    last_by_kind: dict[str, tuple[int, float]] = {}
    prev = None
    for i, ev in enumerate(p.events):
        path = f"events[{i}]"
        if not _is_real(ev.day) or ev.day < 0:
            bad(f"{path}.day", f"must be a non-negative real, got {ev.day!r}")
            continue
        if ev.day > window:
            bad(f"{path}.day", f"{ev.day} exceeds window {window}")
        if ev.symbol in seen:
            bad(f"{path}.symbol", f"duplicate symbol {ev.symbol}")
        seen.add(ev.symbol)
        if prev is not None and _event_key(ev) < _event_key(prev):
            bad(path, "events not sorted by (day, symbol)")
        prev = ev
    # ordinal/day consistency per kind, independent of storage order
    for ev in sorted(p.events, key=lambda e: (e.symbol.kind, e.symbol.ordinal)):
        if not _is_real(ev.day):
            continue
        k = ev.symbol.kind
        if k in last_by_kind:
            ord_prev, day_prev = last_by_kind[k]
            if not ev.day > day_prev:
                bad("events", f"{k}_{ord_prev} at day {day_prev} does not precede {ev.symbol} at day {ev.day}")
        last_by_kind[k] = (ev.symbol.ordinal, ev.day)
    return out


def validate_cohort(cohort: Cohort) -> list[Violation]:
    """Return every invariant violation in ``cohort``; an empty list means valid."""
    out: list[Violation] = []
    ids = set()
    for p in cohort.patients:
        if p.id in ids:
            out.append(Violation(p.id, "id", "duplicate patient id"))
        ids.add(p.id)
        out.extend(validate_patient(p))
    observed = sorted({ev.symbol for p in cohort.patients for ev in p.events})
    if list(cohort.vocabulary) != observed:
        out.append(Violation(None, "vocabulary", "does not equal the sorted union of observed symbols"))
    return out


def post_onset_warnings(cohort: Cohort) -> list[Violation]:
    """Events recorded after outcome onset; accepted but worth flagging."""
    out = []
    for p in cohort.patients:
        if p.onset_day is None:
            continue
        for i, ev in enumerate(p.events):
            if _is_real(ev.day) and ev.day > p.onset_day:
                out.append(Violation(p.id, f"events[{i}]", f"{ev.symbol} at day {ev.day} after onset {p.onset_day}"))
    return out


# -- JSONL wire format -------------------------------------------------------


def patient_to_dict(p: PatientRecord) -> dict:
    return {
        "id": p.id,
        "label": p.label,
        "onset_day": p.onset_day,
        "window_days": p.window_days,
        "events": [{"kind": e.symbol.kind, "ordinal": e.symbol.ordinal, "day": e.day} for e in p.events],
    }


def patient_from_dict(d: dict) -> PatientRecord:
    """Parse one JSONL object. Raises ``KeyError``/``ValueError`` naming the bad field."""
    for key in ("id", "label", "window_days", "events"):
        if key not in d:
            raise KeyError(key)
    events = []
    for i, e in enumerate(d["events"]):
        for key in ("kind", "ordinal", "day"):
            if key not in e:
                raise KeyError(f"events[{i}].{key}")
        events.append(EventInstance(EventSymbol(e["kind"], e["ordinal"]), e["day"]))
    # storage order is preserved so validation can see unsorted input
    return PatientRecord(
        id=d["id"],
        events=tuple(events),
        label=d["label"],
        window_days=d["window_days"],
        onset_day=d.get("onset_day"),
    )


def dumps_cohort(cohort: Cohort) -> str:
    return "".join(json.dumps(patient_to_dict(p), ensure_ascii=False) + "\n" for p in cohort.patients)
