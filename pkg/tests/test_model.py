import math
import time

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import kendalltau

from tforge.model import (
    PARAM_NAMES,
    ForwardTrace,
    ModelConfig,
    ModelParams,
    TrainingDiverged,
    backward,
    batch_loss_and_grad,
    forward,
    init_params,
    loss,
    make_batch,
    total_loss,
    train,
)
from tforge.types import Cohort, EventInstance, PatientRecord, PossibilityY

from _util import cohort, finite_difference_check, gradient_group_ok, patient, random_cohort, sym


def perturbed_params(vocab, seed=0, embed_dim=4, hidden_dim=5, scale=0.3, **cfg):
    config = ModelConfig(embed_dim=embed_dim, hidden_dim=hidden_dim, seed=seed, **cfg)
    P = init_params(config, vocab)
    rng = np.random.default_rng(seed + 100)
    for k in P.arrays:
        P.arrays[k] += rng.normal(0, scale, P.arrays[k].shape)
    return P


def oracle_forward(P, p):
    """Plain per-event recomputation of the forward pass."""
    cfg = P.config
    idx = {s: i for i, s in enumerate(P.vocabulary)}
    d = cfg.embed_dim
    A = P.arrays

    def head(E_row, ctx):
        h = np.tanh(A["W1"] @ np.concatenate([E_row, ctx]) + A["b1"])
        return float(A["w2"] @ h + A["b2"])

    evs = p.sorted_events()
    e = [A["E"][idx[ev.symbol]] + A["w_enc"] * (ev.day / p.window_days) + A["b_enc"] for ev in evs]
    ctx0 = sum(e) / len(e)
    tau0 = [head(A["E"][idx[ev.symbol]], ctx0) for ev in evs]
    bar = sum(tau0) / len(tau0)
    z = [float(A["q"] @ ei) / math.sqrt(d) - cfg.attn_decay * abs(t - bar) for ei, t in zip(e, tau0)]
    mz = max(z)
    w = [math.exp(v - mz) for v in z]
    a = [x / sum(w) for x in w]
    ctx = sum(ai * ei for ai, ei in zip(a, e))
    tau = [head(A["E"][i], ctx) for i in range(len(P.vocabulary))]
    u = float(A["w_y"] @ ctx + A["b_y"])
    return np.array(a), ctx, np.array(tau), 1 / (1 + math.exp(-u)), float(A["w_t"] @ ctx + A["b_t"])


# -- init ---------------------------------------------------------------------


def test_init_deterministic_and_shaped():
    vocab = (sym("A_1"), sym("B_1"), sym("C_1"))
    cfg = ModelConfig(seed=9)
    P1, P2 = init_params(cfg, vocab), init_params(cfg, vocab)
    for k in PARAM_NAMES:
        assert np.array_equal(P1.arrays[k], P2.arrays[k])
    bound = 1 / math.sqrt(cfg.embed_dim)
    assert P1.E.shape == (3, 16) and P1.W1.shape == (32, 32)
    for k in ("E", "w_enc", "q", "W1", "w2", "w_y", "w_t"):
        assert np.all(np.abs(P1.arrays[k]) <= bound)
    for k in ("b_enc", "b1", "b2", "b_y", "b_t"):
        assert not np.any(P1.arrays[k])


def test_single_symbol_vocabulary():
    assert init_params(ModelConfig(), (sym("A_1"),)).E.shape == (1, 16)


def test_empty_vocabulary_rejected():
    with pytest.raises(ValueError):
        init_params(ModelConfig(), ())


@pytest.mark.parametrize("field, value", [("embed_dim", 0), ("learning_rate", 0.0), ("order_margin", -1.0), ("adam_beta1", 1.0)])
def test_config_ranges(field, value):
    with pytest.raises(ValueError):
        ModelConfig(**{field: value})


def test_params_dict_round_trip():
    P = perturbed_params((sym("A_1"), sym("B_2")))
    Q = ModelParams.from_dict(P.to_dict(), P.config)
    assert Q.vocabulary == P.vocabulary
    for k in PARAM_NAMES:
        assert np.array_equal(Q.arrays[k], P.arrays[k]) and Q.arrays[k].shape == P.arrays[k].shape


# -- forward ------------------------------------------------------------------


def test_forward_matches_oracle():
    rng = np.random.default_rng(4)
    c = random_cohort(rng, n_patients=5)
    P = perturbed_params(c.vocabulary, seed=2, attn_decay=0.7)
    for p in c.patients:
        tr = forward(P, p)
        a, ctx, tau, prob, t_hat = oracle_forward(P, p)
        assert np.allclose(tr.attention, a, rtol=0, atol=1e-12)
        assert np.allclose(tr.ctx, ctx, rtol=0, atol=1e-12)
        assert np.allclose(tr.tau, tau, rtol=0, atol=1e-12)
        assert abs(tr.outcome.p_positive - prob) < 1e-12 and abs(tr.outcome.t_hat - t_hat) < 1e-12


def test_single_event_attention_is_exactly_one():
    P = perturbed_params((sym("A_1"),))
    assert forward(P, patient("a", [("A_1", 3)])).attention.tolist() == [1.0]


def test_attention_is_a_probability_vector():
    rng = np.random.default_rng(0)
    c = random_cohort(rng, n_patients=6, kinds=("A", "B", "C", "D"), ordinals=(1, 2, 3))
    P = perturbed_params(c.vocabulary, scale=2.0)
    for p in c.patients:
        a = forward(P, p).attention
        assert abs(a.sum() - 1) <= 1e-9 and np.all(a >= 0) and len(a) == len(p.events)


def test_storage_order_of_same_day_events_is_irrelevant():
    P = perturbed_params((sym("A_1"), sym("B_1"), sym("C_1")))
    evs = [EventInstance(sym("A_1"), 5.0), EventInstance(sym("B_1"), 5.0), EventInstance(sym("C_1"), 9.0)]
    p1 = PatientRecord("x", tuple(evs), 0, 100.0)
    p2 = PatientRecord("x", (evs[1], evs[0], evs[2]), 0, 100.0)
    t1, t2 = forward(P, p1), forward(P, p2)
    assert np.array_equal(t1.tau, t2.tau) and np.array_equal(t1.attention, t2.attention)
    assert t1.outcome == t2.outcome


def test_forward_errors():
    P = perturbed_params((sym("A_1"),))
    with pytest.raises(KeyError):
        forward(P, patient("a", [("Z_1", 1)]))
    with pytest.raises(ValueError):
        forward(P, PatientRecord("a", (), 0, 100.0))


# -- loss ---------------------------------------------------------------------


def hand_trace(label_cfg=ModelConfig()):
    vocab = (sym("A_1"), sym("B_1"))
    return ForwardTrace(
        attention=np.array([0.5, 0.5]),
        ctx=np.zeros(2),
        tau=np.array([1.0, 1.05]),
        outcome=PossibilityY(float(expit(0.3)), 0.5),
        config=label_cfg,
        vocabulary=vocab,
        logit=0.3,
    )


def test_hand_built_two_event_loss():
    # BCE(sigmoid(0.3), 1) = 0.554355..., Huber(0.5 - 60/100) * 0.5 = 0.0025,
    # R_ord = softplus(0.1 - 0.05) = 0.718459...
    p = patient("a", [("A_1", 10), ("B_1", 20)], label=1, onset=60)
    assert abs(loss(hand_trace(), p) - 1.2753148924818134) <= 1e-12


def test_negative_label_has_no_time_term():
    p = patient("a", [("A_1", 10), ("B_1", 20)], label=0)
    assert abs(loss(hand_trace(), p) - 1.5728148924818135) <= 1e-12
    assert loss(hand_trace(ModelConfig(gamma_time=0.0)), p) == loss(hand_trace(ModelConfig(gamma_time=5.0)), p)


def test_large_gaps_give_vanishing_order_term():
    tr = hand_trace(ModelConfig(beta_order=1.0))
    tr.tau = np.array([0.0, 60.0])
    p = patient("a", [("A_1", 10), ("B_1", 20)], label=0)
    no_order = loss(hand_trace(ModelConfig(beta_order=0.0)), p)
    # softplus(0.1 - 60) is about 1e-26
    assert 0 <= loss(tr, p) - no_order < 1e-20


def test_same_day_pairs_carry_no_order_term():
    p = patient("a", [("A_1", 10), ("B_1", 10)], label=0)
    tr = hand_trace()
    assert loss(tr, p) == loss(hand_trace(ModelConfig(beta_order=0.0)), p)


def test_trace_loss_agrees_with_batch_loss():
    rng = np.random.default_rng(7)
    c = random_cohort(rng, n_patients=4)
    P = perturbed_params(c.vocabulary)
    per = [loss(forward(P, p), p) for p in c.patients]
    assert abs(np.mean(per) - total_loss(P, c.patients)) < 1e-12


# -- gradients ------------------------------------------------------------------


def test_finite_difference_every_group():
    rng = np.random.default_rng(11)
    c = random_cohort(rng, n_patients=3)
    P = perturbed_params(c.vocabulary, seed=5)
    for name, (err, n_fd, n_g) in finite_difference_check(P, list(c.patients)).items():
        assert gradient_group_ok(err, n_fd, n_g), (name, err, n_fd, n_g)


def test_backward_matches_batch_for_one_patient():
    rng = np.random.default_rng(1)
    c = random_cohort(rng, n_patients=3)
    P = perturbed_params(c.vocabulary)
    p = c.patients[2]
    g1 = backward(P, p)
    _, g2, _ = batch_loss_and_grad(P, make_batch([p], P.index))
    for k in PARAM_NAMES:
        assert np.array_equal(g1[k], g2[k])


def test_w_y_gradient_sign_flips_with_label():
    vocab = (sym("A_1"), sym("B_1"))
    P = perturbed_params(vocab, beta_order=0.0, gamma_time=0.0)
    pos = patient("a", [("A_1", 10), ("B_1", 40)], label=1)
    neg = patient("a", [("A_1", 10), ("B_1", 40)], label=0)
    g1, g0 = backward(P, pos)["w_y"], backward(P, neg)["w_y"]
    ctx = forward(P, pos).ctx
    nz = np.abs(ctx) > 1e-12
    assert np.all(np.sign(g1[nz]) == -np.sign(g0[nz]))
    # dL/dw_y = (p - y) ctx, bounded by the saturation of the sigmoid
    p = forward(P, pos).outcome.p_positive
    assert np.allclose(g1, (p - 1) * ctx, atol=1e-14) and np.allclose(g0, p * ctx, atol=1e-14)


def test_unreachable_parameters_get_exact_zero_gradient():
    # one observed event: the softmax is constant, no order pairs exist and the
    # timing head feeds nothing but the attention logits
    vocab = (sym("A_1"), sym("B_1"), sym("C_1"))
    P = perturbed_params(vocab)
    g = backward(P, patient("a", [("B_1", 30)], label=1, onset=90))
    for k in ("q", "W1", "b1", "w2", "b2"):
        assert not np.any(g[k]), k
    assert not np.any(g["E"][[0, 2]])
    assert np.any(g["E"][1]) and np.any(g["w_y"]) and np.any(g["w_t"])


def test_scale_freedom_of_tau_bias():
    rng = np.random.default_rng(3)
    c = random_cohort(rng, n_patients=4)
    P = perturbed_params(c.vocabulary)
    Q = P.copy()
    Q.arrays["b2"] += 7.25
    for p in c.patients:
        a, b = forward(P, p), forward(Q, p)
        assert np.allclose(b.tau - a.tau, 7.25, atol=1e-12)
        assert np.allclose(a.attention, b.attention, atol=1e-12)
        assert abs(loss(a, p) - loss(b, p)) < 1e-12


# -- training -------------------------------------------------------------------


def test_zero_epochs_returns_init():
    c = cohort(patient("a", [("A_1", 1), ("B_1", 5)]), patient("b", [("A_1", 2)], label=1, onset=50))
    cfg = ModelConfig(epochs=0, seed=4)
    r = train(cfg, c)
    P0 = init_params(cfg, c.vocabulary)
    for k in PARAM_NAMES:
        assert np.array_equal(r.params.arrays[k], P0.arrays[k])
    assert r.loss_curve == []
    assert np.allclose(r.tau[0], forward(P0, c.patients[0]).tau, rtol=0, atol=1e-12)


def test_training_is_bit_deterministic():
    rng = np.random.default_rng(2)
    c = random_cohort(rng, n_patients=6)
    cfg = ModelConfig(epochs=25, seed=8)
    a, b = train(cfg, c), train(cfg, c)
    assert a.loss_curve == b.loss_curve
    for k in PARAM_NAMES:
        assert np.array_equal(a.params.arrays[k], b.params.arrays[k])


def test_training_lowers_the_loss():
    rng = np.random.default_rng(2)
    c = random_cohort(rng, n_patients=6)
    r = train(ModelConfig(epochs=50, seed=1), c)
    assert r.final_loss < r.loss_curve[0]


def test_divergence_reports_epoch():
    rng = np.random.default_rng(2)
    c = random_cohort(rng, n_patients=4)
    with pytest.raises(TrainingDiverged) as exc:
        train(ModelConfig(learning_rate=1e200, epochs=10), c)
    assert 0 <= exc.value.epoch <= 10


def test_separable_toy_cohort_accuracy():
    # two templates over disjoint symbols, labels 0.95 / 0.05
    rng = np.random.default_rng(0)
    pats = []
    for i in range(200):
        first = i % 2 == 0
        names = ("Chemo_1", "Chemo_2") if first else ("Radia_1", "Radia_2")
        d0 = rng.uniform(0, 50)
        label = int(rng.random() < (0.95 if first else 0.05))
        pats.append(patient(f"p{i:03d}", [(names[0], d0), (names[1], d0 + 30)], label=label, window=365.0,
                            onset=rng.uniform(d0 + 30, 365.0) if label else None))
    c = Cohort.from_patients(pats)
    r = train(ModelConfig(seed=0), c)
    acc = np.mean([(o.p_positive > 0.5) == p.label for o, p in zip(r.outcomes, c.patients)])
    assert acc >= 0.9


def test_order_regularizer_on_noise_free_data():
    from dataclasses import replace

    from tforge.cohortgen import generate_cohort, reference_spec

    # planted templates without jitter and without the random noise events
    c = generate_cohort(replace(reference_spec(n_patients=150, jitter=0.0), noise_symbols=()))
    r = train(ModelConfig(seed=3), c)
    idx = r.params.index
    kts = []
    for i, p in enumerate(c.patients):
        ev = p.sorted_events()
        if len(ev) >= 2:
            kts.append(kendalltau([e.day for e in ev], [r.tau[i, idx[e.symbol]] for e in ev])[0])
    assert np.nanmedian(kts) >= 0.8
