"""Small builders shared by the test modules."""

import numpy as np

from tforge.store import RunRecord
from tforge.types import Cohort, EventInstance, EventSymbol, PatientRecord


def sym(text):
    return EventSymbol.parse(text)


def patient(pid, events, label=0, window=100.0, onset=None):
    if label == 1 and onset is None:
        onset = window
    evs = [EventInstance(sym(s), float(d)) for s, d in events]
    return PatientRecord.build(pid, evs, label, float(window), onset)


def cohort(*patients):
    return Cohort.from_patients(patients)


def injected_run(ids, symbols, tau, run_id=0, p_positive=None, t_hat=None):
    """A RunRecord with hand-set values and no trained parameters."""
    tau = np.asarray(tau, dtype=np.float64).reshape(len(ids), len(symbols))
    n = len(ids)
    return RunRecord(
        run_id=run_id,
        seed=run_id,
        patient_ids=list(ids),
        vocabulary=tuple(sym(s) for s in symbols),
        tau=tau,
        p_positive=np.full(n, 0.5) if p_positive is None else np.asarray(p_positive, dtype=np.float64),
        t_hat=np.zeros(n) if t_hat is None else np.asarray(t_hat, dtype=np.float64),
    )


def random_cohort(rng, n_patients=3, kinds=("A", "B", "C"), ordinals=(1, 2), window=100.0):
    """Patients with 2+ random events whose per-kind ordinals follow day order."""
    vocab = [EventSymbol(k, o) for k in kinds for o in ordinals]
    pats = []
    for i in range(n_patients):
        chosen = rng.choice(len(vocab), size=min(len(vocab), 2 + i), replace=False)
        by_kind = {}
        for j in chosen:
            s = vocab[j]
            by_kind.setdefault(s.kind, []).append(s)
        evs = []
        for syms in by_kind.values():
            days = np.sort(rng.uniform(0, window, size=len(syms)))
            evs += [EventInstance(s, float(d)) for s, d in zip(sorted(syms), days)]
        label = i % 2
        pats.append(PatientRecord.build(f"p{i}", evs, label, window, window * 0.99 if label else None))
    return Cohort.from_patients(pats)


def finite_difference_check(P, patients, h=1e-5):
    """Analytic batch gradient vs central differences, per parameter group.

    Returns ``{name: (relative_error, |fd|, |analytic|)}`` with the relative
    error measured in the Euclidean norm over the whole group.
    """
    from tforge.model import PARAM_NAMES, batch_loss_and_grad, make_batch, total_loss

    _, grads, _ = batch_loss_and_grad(P, make_batch(patients, P.index))
    out = {}
    for name in PARAM_NAMES:
        a = P.arrays[name]
        fd = np.zeros_like(a)
        for ix in np.ndindex(a.shape):
            old = a[ix]
            a[ix] = old + h
            up = total_loss(P, patients)
            a[ix] = old - h
            down = total_loss(P, patients)
            a[ix] = old
            fd[ix] = (up - down) / (2 * h)
        n_fd, n_g = np.linalg.norm(fd), np.linalg.norm(grads[name])
        err = np.linalg.norm(fd - grads[name]) / max(n_fd, n_g, 1e-300)
        out[name] = (float(err), float(n_fd), float(n_g))
    return out


def gradient_group_ok(err, n_fd, n_g, tol=1e-4, floor=1e-8):
    # a group whose true gradient vanishes (e.g. the tau bias, by scale freedom)
    # has no meaningful relative error; both norms must then sit at round-off level
    return err < tol or (n_fd < floor and n_g < floor)


ACCEPTANCE_LINES = []


def report(criterion, name, ok, detail):
    """Record one PASS/FAIL line for the end-of-session summary and echo it."""
    line = f"criterion {criterion} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
