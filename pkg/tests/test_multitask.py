import dataclasses

import numpy as np
import pytest

from conftest import SMALL_ENCODER

from dfl import crf, nn
from dfl.corpus import DISFL, NER, POS
from dfl.multitask import (AdamState, TrainConfig, TrainingError, adam_step, alpha_sweep,
                           build_model, clip_grad_norm, combine_losses, joint_loss, strip_aux,
                           train)

TINY = dict(d_model=8, num_heads=2, num_layers=1, d_ff=16, dropout_rate=0.0, max_len=32)
ALL = (DISFL, NER, POS)


def f64_model(corpus, aux=(NER, POS), seed=1):
    return build_model(corpus, TINY, aux, seed=seed, min_freq=1, dtype=np.float64)


def test_combine_losses_examples():
    assert combine_losses(2.0, [], 0.5) == 2.0
    assert combine_losses(2.0, [3.0, 1.0], 0.0) == 2.0
    assert combine_losses(2.0, [4.0], 0.5) == 4.0


def test_loss_decomposes_into_per_sentence_crf_terms(eight_sentences):
    model = f64_model(eight_sentences)
    batch = model.encode(eight_sentences, ALL)
    parts, _ = joint_loss(model, batch, 0.3, (NER, POS))
    H, _ = nn.encoder_forward(model.encoder, batch.tokens, batch.mask)
    ref = {}
    for task in ALL:
        head = model.heads[task]
        terms = []
        for b in range(len(eight_sentences)):
            k = int(batch.mask[b].sum())
            E = crf.emissions(head, H[b, :k])
            terms.append(crf.nll(E, head.T, head.s, head.e, batch.labels[task][b, :k])[0])
        ref[task] = np.mean(terms)
    for task in ALL:
        assert parts.per_task[task] == pytest.approx(ref[task], abs=1e-9)
    assert parts.total == pytest.approx(ref[DISFL] + 0.3 * (ref[NER] + ref[POS]), abs=1e-9)


def test_loss_linear_in_alpha(eight_sentences):
    model = f64_model(eight_sentences)
    batch = model.encode(eight_sentences, ALL)
    l0 = joint_loss(model, batch, 0.0, (NER, POS))[0].total
    l1 = joint_loss(model, batch, 1.0, (NER, POS))[0].total
    l3 = joint_loss(model, batch, 0.37, (NER, POS))[0].total
    assert l3 == pytest.approx(l0 + 0.37 * (l1 - l0), abs=1e-10)


def test_alpha_zero_matches_single_task(eight_sentences):
    model = f64_model(eight_sentences)
    batch = model.encode(eight_sentences, ALL)
    joint, g_joint = joint_loss(model, batch, 0.0, (NER, POS))
    single, g_single = joint_loss(model, batch, 0.0, ())
    assert joint.total == single.total
    for k, g in g_single.items():
        if k.startswith("enc.") or k.startswith("DISFL."):
            np.testing.assert_array_equal(g_joint[k], g)


def test_disabled_heads_get_zero_gradient(eight_sentences):
    model = f64_model(eight_sentences)
    batch = model.encode(eight_sentences, ALL)
    _, grads = joint_loss(model, batch, 0.5, (POS,))
    assert all(not grads[f"NER.{k}"].any() for k in "WbTse")
    assert any(grads[f"POS.{k}"].any() for k in "WbTse")


def test_full_gradient_finite_difference(eight_sentences):
    sents = eight_sentences[:3]
    model = f64_model(sents)
    rng = np.random.default_rng(0)
    for p in model.named_params().values():
        p += rng.normal(scale=0.1, size=p.shape)
    batch = model.encode(sents, ALL)
    _, grads = joint_loss(model, batch, 0.4, (NER, POS))
    params = model.named_params()
    err = nn.max_relative_error(lambda: joint_loss(model, batch, 0.4, (NER, POS))[0].total,
                                params, grads)
    assert err < 1e-4


def test_missing_labels_and_heads_rejected(eight_sentences):
    model = f64_model(eight_sentences, aux=())
    batch = model.encode(eight_sentences, (DISFL,))
    with pytest.raises(ValueError):
        joint_loss(model, batch, 0.1, (NER,))
    with pytest.raises(ValueError):
        joint_loss(model, batch, -0.1, ())


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = {"x": np.array([1.0, -2.0])}
        adam_step(p, {"x": np.array([3.0, -0.5])}, AdamState.zeros_like(p), lr=0.1)
        np.testing.assert_allclose(p["x"], [0.9, -1.9], atol=1e-7)

    def test_zero_gradient_leaves_params(self):
        p = {"x": np.array([1.0, 2.0])}
        state = AdamState.zeros_like(p)
        for _ in range(3):
            adam_step(p, {"x": np.zeros(2)}, state, lr=0.1)
        assert p["x"].tolist() == [1.0, 2.0]

    def test_descends_on_quadratic(self):
        p = {"x": np.array([2.0])}
        state = AdamState.zeros_like(p)
        seen = [float(p["x"][0] ** 2)]
        for _ in range(3):
            adam_step(p, {"x": 2 * p["x"]}, state, lr=0.1)
            seen.append(float(p["x"][0] ** 2))
        assert seen == sorted(seen, reverse=True) and len(set(seen)) == 4

    def test_shape_mismatch(self):
        p = {"x": np.zeros(2)}
        with pytest.raises(ValueError):
            adam_step(p, {"x": np.zeros(3)}, AdamState.zeros_like(p), lr=0.1)


def test_clip_grad_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
    assert np.sqrt(g["a"] ** 2 + g["b"] ** 2)[0] == pytest.approx(1.0)
    small = {"a": np.array([0.1])}
    clip_grad_norm(small, 1.0)
    assert small["a"][0] == 0.1


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(alpha=-1)
    with pytest.raises(ValueError):
        TrainConfig(aux_tasks=("CHUNK",))
    assert TrainConfig(aux_tasks=("ner",)).aux_tasks == ("NER",)


def _cfg(**kw):
    return TrainConfig(**{**dict(learning_rate=1e-3, batch_size=8, epochs=3, seed=4), **kw})


def test_zero_epochs_returns_model_unchanged(small_corpus):
    model = build_model(small_corpus, SMALL_ENCODER, seed=2)
    before = {k: v.copy() for k, v in model.named_params().items()}
    res = train(model, small_corpus[:40], small_corpus[40:], _cfg(epochs=0))
    assert res.log == [] and res.best_dev_f1 is None
    for k, v in res.model.named_params().items():
        assert np.array_equal(v, before[k])


def test_training_is_deterministic(small_corpus):
    runs = []
    for _ in range(2):
        model = build_model(small_corpus, SMALL_ENCODER, seed=2)
        res = train(model, small_corpus[:40], small_corpus[40:], _cfg())
        runs.append((res.log, res.model.named_params()))
    assert runs[0][0] == runs[1][0]
    for k, v in runs[0][1].items():
        assert np.array_equal(v, runs[1][1][k])


def test_alpha_zero_training_equals_single_task(small_corpus):
    out = []
    for aux in ((NER, POS), ()):
        model = build_model(small_corpus, SMALL_ENCODER, aux, seed=2)
        res = train(model, small_corpus[:40], small_corpus[40:], _cfg(alpha=0.0, aux_tasks=aux))
        out.append(res)
    assert [r.dev_f1 for r in out[0].log] == [r.dev_f1 for r in out[1].log]
    a, b = out[0].model.named_params(), out[1].model.named_params()
    for k in b:
        assert np.array_equal(a[k], b[k])


def test_best_epoch_kept_and_strip_aux_predicts_identically(small_corpus):
    model = build_model(small_corpus, SMALL_ENCODER, seed=2)
    dev = small_corpus[40:]
    res = train(model, small_corpus[:40], dev, _cfg(epochs=4))
    assert res.best_dev_f1 == max(r.dev_f1 for r in res.log)
    assert res.model.evaluate(dev).f1 == pytest.approx(res.best_dev_f1)
    stripped = strip_aux(res.model)
    assert set(stripped.heads) == {DISFL}
    assert stripped.predict(dev) == res.model.predict(dev)


def test_nan_loss_raises(small_corpus):
    model = build_model(small_corpus, SMALL_ENCODER, seed=2)
    model.heads[DISFL].T[0, 0] = np.nan
    with pytest.raises(TrainingError):
        train(model, small_corpus[:40], small_corpus[40:], _cfg(epochs=1))


def test_empty_splits_rejected(small_corpus):
    model = build_model(small_corpus, SMALL_ENCODER, seed=2)
    with pytest.raises(ValueError):
        train(model, [], small_corpus, _cfg())


def test_predict_labels_overflow_tokens_fluent(small_corpus):
    model = build_model(small_corpus, dict(SMALL_ENCODER, max_len=4), seed=2)
    long = max(small_corpus, key=len)
    tags = model.predict([long])[0]
    assert len(tags) == len(long) and set(tags[4:]) <= {"F"}


def test_alpha_sweep_rows_and_csv(small_corpus):
    res = alpha_sweep(small_corpus[:40], small_corpus[40:], _cfg(epochs=1), [0.0, 0.5],
                      seeds=(1, 2), encoder=SMALL_ENCODER)
    lines = res.to_csv().strip().splitlines()
    assert lines[0] == "alpha,seed,dev_f1,dev_precision,dev_recall"
    assert len(lines) == 5
    assert res.best_alpha in (0.0, 0.5)
    assert res.mean_f1[res.best_alpha] == max(res.mean_f1.values())


def test_alpha_sweep_tie_prefers_smaller(small_corpus, monkeypatch):
    import dfl.multitask as mt
    from dfl.metrics import Metrics
    monkeypatch.setattr(mt.JointModel, "evaluate", lambda self, s: Metrics(1, 1, 1))
    res = alpha_sweep(small_corpus[:40], small_corpus[40:], _cfg(epochs=0), [0.5, 0.1],
                      seeds=(1,), encoder=SMALL_ENCODER)
    assert res.best_alpha == 0.1


def test_replace_keeps_config_valid():
    cfg = dataclasses.replace(_cfg(), alpha=0.2, seed=9)
    assert cfg.alpha == 0.2 and cfg.seed == 9
