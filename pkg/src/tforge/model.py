"""Event-sequence model with a learnable relative timeline.

For every patient the network assigns each vocabulary symbol a virtual
timing ``tau`` and predicts ``(p_positive, t_hat)``. Attention over observed
events is biased against events whose timing sits far from the patient's
mean timing, and an order-margin penalty keeps ``tau`` consistent with
observed day order without fixing its scale.

All computation runs on padded patient batches in float64; per-patient
``forward``/``backward`` are the batch code applied to a batch of one.
Gradients are derived by hand and checked against finite differences in
the test-suite.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .types import Cohort, EventSymbol, PatientRecord, PossibilityY

PARAM_NAMES = ("E", "w_enc", "b_enc", "q", "W1", "b1", "w2", "b2", "w_y", "b_y", "w_t", "b_t")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 16
    hidden_dim: int = 32
    attn_decay: float = 1.0
    order_margin: float = 0.1
    beta_order: float = 1.0
    gamma_time: float = 0.5
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 300
    seed: int = 0

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ValueError("epochs must be a non-negative integer")
        if self.attn_decay < 0 or self.beta_order < 0 or self.gamma_time < 0:
            raise ValueError("attn_decay and loss weights must be non-negative")
        if not self.order_margin > 0 or not self.learning_rate > 0 or not self.adam_eps > 0:
            raise ValueError("order_margin, learning_rate and adam_eps must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    """Network weights plus the vocabulary and config they were built for.

    Shapes: ``E`` (V, d); ``w_enc``, ``b_enc``, ``q``, ``w_y``, ``w_t`` (d,);
    ``W1`` (H, 2d) acting on ``[E[s], ctx]``; ``b1``, ``w2`` (H,); scalar
    biases ``b2``, ``b_y``, ``b_t`` stored as 0-d arrays.
    """

    config: ModelConfig
    vocabulary: tuple[EventSymbol, ...]
    arrays: dict[str, np.ndarray]

    def __getattr__(self, name):
        arrays = self.__dict__.get("arrays")
        if arrays is not None and name in arrays:
            return arrays[name]
        raise AttributeError(name)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.vocabulary, {k: v.copy() for k, v in self.arrays.items()})

    @property
    def index(self) -> dict[EventSymbol, int]:
        return {s: i for i, s in enumerate(self.vocabulary)}

    def to_dict(self) -> dict:
        return {
            "vocabulary": [str(s) for s in self.vocabulary],
            "arrays": {k: self.arrays[k].tolist() for k in PARAM_NAMES},
        }

    @classmethod
    def from_dict(cls, d: dict, config: ModelConfig) -> "ModelParams":
        vocab = tuple(EventSymbol.parse(s) for s in d["vocabulary"])
        arrays = {k: np.asarray(d["arrays"][k], dtype=np.float64) for k in PARAM_NAMES}
        return cls(config, vocab, arrays)


def init_params(config: ModelConfig, vocabulary: Sequence[EventSymbol]) -> ModelParams:
    vocabulary = tuple(vocabulary)
    if not vocabulary:
        raise ValueError("vocabulary is empty")
    d, H, V = config.embed_dim, config.hidden_dim, len(vocabulary)
    rng = np.random.default_rng(config.seed)
    bound = 1.0 / math.sqrt(d)

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    arrays = {
        "E": u(V, d),
        "w_enc": u(d),
        "b_enc": np.zeros(d),
        "q": u(d),
        "W1": u(H, 2 * d),
        "b1": np.zeros(H),
        "w2": u(H),
        "b2": np.zeros(()),
        "w_y": u(d),
        "b_y": np.zeros(()),
        "w_t": u(d),
        "b_t": np.zeros(()),
    }
    return ModelParams(config, vocabulary, arrays)


# -- batching -----------------------------------------------------------------


@dataclass
class Batch:
    """Padded view of patients: ``idx``/``x``/``mask`` are (B, L)."""

    idx: np.ndarray
    x: np.ndarray
    mask: np.ndarray
    days: np.ndarray
    label: np.ndarray
    target: np.ndarray
    n: np.ndarray

    @property
    def pair_mask(self) -> np.ndarray:
        # consecutive observed pairs whose days strictly increase
        m = self.mask[:, 1:] & self.mask[:, :-1]
        return m & (self.days[:, 1:] > self.days[:, :-1])


def make_batch(patients: Sequence[PatientRecord], index: dict[EventSymbol, int]) -> Batch:
    B = len(patients)
    L = max((len(p.events) for p in patients), default=1)
    idx = np.zeros((B, L), dtype=np.intp)
    x = np.zeros((B, L))
    days = np.zeros((B, L))
    mask = np.zeros((B, L), dtype=bool)
    label = np.zeros(B)
    target = np.zeros(B)
    for b, p in enumerate(patients):
        if not p.events:
            raise ValueError(f"patient {p.id} has no events")
        for i, ev in enumerate(p.sorted_events()):
            try:
                idx[b, i] = index[ev.symbol]
            except KeyError:
                raise KeyError(f"patient {p.id}: symbol {ev.symbol} not in vocabulary") from None
            x[b, i] = ev.day / p.window_days
            days[b, i] = ev.day
            mask[b, i] = True
        label[b] = p.label
        if p.label == 1 and p.onset_day is not None:
            target[b] = p.onset_day / p.window_days
    return Batch(idx, x, mask, days, label, target, mask.sum(axis=1))


# -- forward ------------------------------------------------------------------


def _head(P, E_rows, ctx_proj):
    """Timing head on ``[E_rows, ctx]`` with the context half pre-projected.

    ``E_rows`` (..., K, d), ``ctx_proj`` (B, H). Returns (tau, hidden).
    """
    d = P.config.embed_dim
    pre = E_rows @ P.W1[:, :d].T + ctx_proj[:, None, :] + P.b1
    h = np.tanh(pre)
    return h @ P.w2 + P.b2, h


def encode(P: ModelParams, batch: Batch):
    Eobs = P.E[batch.idx]
    e = Eobs + batch.x[..., None] * P.w_enc + P.b_enc
    e = np.where(batch.mask[..., None], e, 0.0)
    return Eobs, e


def attend(P: ModelParams, e, mask, tau_obs):
    """Attention with the relative-timing bias; returns (a, ctx, dev, z)."""
    d = P.config.embed_dim
    n = mask.sum(axis=1)
    tau_bar = np.where(mask, tau_obs, 0.0).sum(axis=1) / n
    dev = np.where(mask, tau_obs - tau_bar[:, None], 0.0)
    z = (e @ P.q) / math.sqrt(d) - P.config.attn_decay * np.abs(dev)
    z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    w = np.where(mask, np.exp(z), 0.0)
    a = w / w.sum(axis=1, keepdims=True)
    ctx = np.einsum("bl,bld->bd", a, e)
    return a, ctx, dev, z


def attend_backward(P: ModelParams, e, mask, a, dev, g_ctx):
    """Pull ``g_ctx`` back through :func:`attend`.

    Returns gradients w.r.t. (e, q, tau_obs).
    """
    d = P.config.embed_dim
    g_e = a[..., None] * g_ctx[:, None, :]
    g_a = np.einsum("bld,bd->bl", e, g_ctx)
    g_z = a * (g_a - (a * g_a).sum(axis=1, keepdims=True))
    g_z = np.where(mask, g_z, 0.0)
    g_q = np.einsum("bl,bld->d", g_z, e) / math.sqrt(d)
    g_e = g_e + g_z[..., None] * P.q / math.sqrt(d)
    g_dev = -P.config.attn_decay * np.sign(dev) * g_z
    n = mask.sum(axis=1)
    g_tau = np.where(mask, g_dev - (g_dev.sum(axis=1) / n)[:, None], 0.0)
    return g_e, g_q, g_tau


def _forward_batch(P: ModelParams, batch: Batch) -> dict:
    d = P.config.embed_dim
    W1c = P.W1[:, d:]
    Eobs, e = encode(P, batch)
    mask = batch.mask
    ctx0 = e.sum(axis=1) / batch.n[:, None]
    tau0, h0 = _head(P, Eobs, ctx0 @ W1c.T)
    a, ctx, dev, z = attend(P, e, mask, tau0)
    tau, h = _head(P, P.E[None, :, :], ctx @ W1c.T)
    u = ctx @ P.w_y + P.b_y
    t_hat = ctx @ P.w_t + P.b_t
    return dict(Eobs=Eobs, e=e, ctx0=ctx0, tau0=tau0, h0=h0, a=a, ctx=ctx, dev=dev, z=z,
                tau=tau, h=h, u=u, p=expit(u), t_hat=t_hat)


def _losses(P: ModelParams, batch: Batch, c: dict):
    """Per-patient loss terms and the intermediates the backward pass needs."""
    cfg = P.config
    bce = np.logaddexp(0.0, c["u"]) - batch.label * c["u"]
    r = c["t_hat"] - batch.target
    huber = np.where(np.abs(r) <= 1.0, 0.5 * r * r, np.abs(r) - 0.5)
    time_term = cfg.gamma_time * huber * batch.label
    rows = np.arange(len(batch.n))[:, None]
    tau_obs = c["tau"][rows, batch.idx]
    diff = tau_obs[:, 1:] - tau_obs[:, :-1]
    pm = batch.pair_mask
    npairs = pm.sum(axis=1)
    sp = np.where(pm, np.logaddexp(0.0, cfg.order_margin - diff), 0.0)
    r_ord = np.where(npairs > 0, sp.sum(axis=1) / np.maximum(npairs, 1), 0.0)
    total = bce + time_term + cfg.beta_order * r_ord
    return total, dict(bce=bce, time=time_term, r_ord=r_ord, r=r, diff=diff, pm=pm, npairs=npairs)


def _backward_batch(P: ModelParams, batch: Batch, c: dict, parts: dict, scale: np.ndarray) -> dict:
    """Gradient of ``sum_b scale[b] * loss_b`` w.r.t. every parameter array."""
    cfg = P.config
    d = cfg.embed_dim
    W1e, W1c = P.W1[:, :d], P.W1[:, d:]
    mask = batch.mask
    B = len(batch.n)
    g = {k: np.zeros_like(v) for k, v in P.arrays.items()}

    # outcome heads
    g_u = scale * (c["p"] - batch.label)
    g_th = scale * cfg.gamma_time * batch.label * np.clip(parts["r"], -1.0, 1.0)
    ctx = c["ctx"]
    g["w_y"] = g_u @ ctx
    g["b_y"] = np.asarray(g_u.sum())
    g["w_t"] = g_th @ ctx
    g["b_t"] = np.asarray(g_th.sum())
    g_ctx = g_u[:, None] * P.w_y + g_th[:, None] * P.w_t

    # order regularizer -> tau of observed symbols (final pass)
    pm, npairs = parts["pm"], parts["npairs"]
    w_pair = scale * cfg.beta_order / np.maximum(npairs, 1)
    g_diff = np.where(pm, -expit(cfg.order_margin - parts["diff"]), 0.0) * w_pair[:, None]
    g_tau_obs = np.zeros(mask.shape)
    g_tau_obs[:, 1:] += g_diff
    g_tau_obs[:, :-1] -= g_diff
    g_tau = np.zeros((B, len(P.vocabulary)))
    rows = np.broadcast_to(np.arange(B)[:, None], batch.idx.shape)
    np.add.at(g_tau, (rows[mask], batch.idx[mask]), g_tau_obs[mask])

    # timing head, all-symbol pass
    h = c["h"]
    g["w2"] += np.einsum("bv,bvh->h", g_tau, h)
    g["b2"] += g_tau.sum()
    g_pre = g_tau[..., None] * P.w2 * (1.0 - h * h)
    G = g_pre.sum(axis=0)
    g_W1e = G.T @ P.E
    g["E"] += G @ W1e
    g_cproj = g_pre.sum(axis=1)
    g_W1c = g_cproj.T @ ctx
    g_ctx = g_ctx + g_cproj @ W1c
    g["b1"] += G.sum(axis=0)

    # attention
    e = c["e"]
    g_e, g_q, g_tau0 = attend_backward(P, e, mask, c["a"], c["dev"], g_ctx)
    g["q"] += g_q

    # timing head, context-free pass on observed symbols
    h0 = c["h0"]
    g["w2"] += np.einsum("bl,blh->h", g_tau0, h0)
    g["b2"] += g_tau0.sum()
    g_pre0 = np.where(mask[..., None], g_tau0[..., None] * P.w2 * (1.0 - h0 * h0), 0.0)
    g_W1e += np.einsum("blh,bld->hd", g_pre0, c["Eobs"])
    g_Eobs = g_pre0 @ W1e
    g_c0proj = g_pre0.sum(axis=1)
    g_W1c += g_c0proj.T @ c["ctx0"]
    g["b1"] += g_pre0.sum(axis=(0, 1))
    g_ctx0 = g_c0proj @ W1c
    g_e = g_e + g_ctx0[:, None, :] / batch.n[:, None, None]
    g_e = np.where(mask[..., None], g_e, 0.0)

    # encoder
    g_Eobs = g_Eobs + g_e
    g["w_enc"] += np.einsum("bld,bl->d", g_e, batch.x)
    g["b_enc"] += g_e.sum(axis=(0, 1))
    np.add.at(g["E"], batch.idx[mask], g_Eobs[mask])
    g["W1"] = np.concatenate([g_W1e, g_W1c], axis=1)
    return g


def batch_loss_and_grad(P: ModelParams, batch: Batch):
    """Mean loss over the batch and its gradient."""
    c = _forward_batch(P, batch)
    total, parts = _losses(P, batch, c)
    B = len(batch.n)
    grads = _backward_batch(P, batch, c, parts, np.full(B, 1.0 / B))
    return float(total.mean()), grads, c


# -- per-patient API -----------------------------------------------------------


@dataclass
class ForwardTrace:
    attention: np.ndarray
    ctx: np.ndarray
    tau: np.ndarray
    outcome: PossibilityY
    config: ModelConfig
    vocabulary: tuple[EventSymbol, ...]
    tau_context_free: np.ndarray = field(repr=False, default=None)
    logit: float = 0.0

    def tau_map(self) -> dict[EventSymbol, float]:
        return {s: float(t) for s, t in zip(self.vocabulary, self.tau)}


def forward(P: ModelParams, patient: PatientRecord) -> ForwardTrace:
    batch = make_batch([patient], P.index)
    c = _forward_batch(P, batch)
    n = int(batch.n[0])
    return ForwardTrace(
        attention=c["a"][0, :n].copy(),
        ctx=c["ctx"][0].copy(),
        tau=c["tau"][0].copy(),
        outcome=PossibilityY(float(c["p"][0]), float(c["t_hat"][0])),
        config=P.config,
        vocabulary=P.vocabulary,
        tau_context_free=c["tau0"][0, :n].copy(),
        logit=float(c["u"][0]),
    )


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def loss(trace: ForwardTrace, patient: PatientRecord) -> float:
    """Scalar loss of one patient, recomputed from the trace alone."""
    cfg = trace.config
    u = trace.logit
    y = patient.label
    total = _softplus(u) - y * u
    if y == 1:
        r = trace.outcome.t_hat - patient.onset_day / patient.window_days
        total += cfg.gamma_time * (0.5 * r * r if abs(r) <= 1.0 else abs(r) - 0.5)
    index = {s: i for i, s in enumerate(trace.vocabulary)}
    evs = patient.sorted_events()
    terms = [
        _softplus(cfg.order_margin - (trace.tau[index[b.symbol]] - trace.tau[index[a.symbol]]))
        for a, b in zip(evs, evs[1:])
        if b.day > a.day
    ]
    if terms:
        total += cfg.beta_order * sum(terms) / len(terms)
    return float(total)


def backward(P: ModelParams, patient: PatientRecord) -> dict[str, np.ndarray]:
    batch = make_batch([patient], P.index)
    _, grads, _ = batch_loss_and_grad(P, batch)
    return grads


def total_loss(P: ModelParams, patients: Sequence[PatientRecord]) -> float:
    batch = make_batch(patients, P.index)
    c = _forward_batch(P, batch)
    total, _ = _losses(P, batch, c)
    return float(total.mean())


# -- training --------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    patient_ids: list[str]
    tau: np.ndarray  # (patients, vocabulary)
    outcomes: list[PossibilityY]
    loss_curve: list[float]
    final_loss: float

    @property
    def vocabulary(self) -> tuple[EventSymbol, ...]:
        return self.params.vocabulary

    def tau_of(self, symbol: EventSymbol, patient_id: str) -> float:
        return float(self.tau[self.patient_ids.index(patient_id), self.params.vocabulary.index(symbol)])


def predict(P: ModelParams, cohort: Cohort):
    """TauMap matrix, outcomes and mean loss at fixed params."""
    batch = make_batch(cohort.patients, P.index)
    c = _forward_batch(P, batch)
    total, _ = _losses(P, batch, c)
    outcomes = [PossibilityY(float(p), float(t)) for p, t in zip(c["p"], c["t_hat"])]
    return c["tau"].copy(), outcomes, float(total.mean())


def train(config: ModelConfig, cohort: Cohort, log_every: int = 0, logger=None) -> TrainResult:
    """Full-batch Adam; deterministic for a given ``config.seed``."""
    # overflow surfaces as a non-finite loss and is reported as TrainingDiverged
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(config, cohort, log_every, logger)


def _train(config: ModelConfig, cohort: Cohort, log_every: int, logger) -> TrainResult:
    if not cohort.patients:
        raise ValueError("cohort is empty")
    P = init_params(config, cohort.vocabulary)
    batch = make_batch(cohort.patients, P.index)
    m = {k: np.zeros_like(v) for k, v in P.arrays.items()}
    v = {k: np.zeros_like(v) for k, v in P.arrays.items()}
    b1, b2, lr, eps = config.adam_beta1, config.adam_beta2, config.learning_rate, config.adam_eps
    curve = []
    for epoch in range(config.epochs):
        value, grads, _ = batch_loss_and_grad(P, batch)
        if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDiverged(epoch, value)
        curve.append(value)
        if logger is not None and log_every and epoch % log_every == 0:
            logger.info("epoch %d loss %.6f", epoch, value)
        t = epoch + 1
        for k in PARAM_NAMES:
            m[k] = b1 * m[k] + (1 - b1) * grads[k]
            v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
            mhat = m[k] / (1 - b1**t)
            vhat = v[k] / (1 - b2**t)
            P.arrays[k] -= lr * mhat / (np.sqrt(vhat) + eps)
    tau, outcomes, final = predict(P, cohort)
    if not math.isfinite(final) or not np.all(np.isfinite(tau)):
        raise TrainingDiverged(config.epochs, final)
    return TrainResult(P, cohort.ids, tau, outcomes, curve, final)


def with_seed(config: ModelConfig, seed: int) -> ModelConfig:
    return replace(config, seed=seed)
