import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dfl import DisfluencyTagger
from dfl.corpus import DISFL

FAST = dict(d_model=16, num_heads=4, num_layers=1, dropout_rate=0.0, max_len=64,
            learning_rate=1e-3, batch_size=8, epochs=3, min_word_freq=1)


def test_params_round_trip_through_clone():
    est = DisfluencyTagger(alpha=0.25, aux_tasks="pos", seed=7)
    params = est.get_params()
    assert params["alpha"] == 0.25 and params["aux_tasks"] == "pos" and params["d_ff"] is None
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert est.set_params(epochs=2).epochs == 2


def test_fit_predict_transform_score(small_corpus):
    est = DisfluencyTagger(**FAST).fit(small_corpus[:40], eval_set=small_corpus[40:])
    assert len(est.history_) == 3 and set(est.model_.heads) == {DISFL}
    assert set(est.full_model_.heads) == {"DISFL", "NER", "POS"}
    dev = small_corpus[40:]
    pred = est.predict(dev)
    assert [len(p) for p in pred] == [len(s) for s in dev]
    assert est.score(dev) == pytest.approx(est.best_dev_f1_)
    H = est.transform(["i want uh i need a flight", ["to", "boston"]])
    assert [h.shape for h in H] == [(7, 16), (2, 16)] and all(np.isfinite(h).all() for h in H)


def test_word_lists_with_labels_single_task():
    X = [["i", "i", "want", "it"], ["no", "yes", "ok"]] * 4
    y = [["D", "F", "F", "F"], ["D", "F", "F"]] * 4
    est = DisfluencyTagger(**{**FAST, "epochs": 30}, aux_tasks="none").fit(X, y)
    assert est.score(X, y) == 1.0
    assert est.predict(["i i want it"]) == [["D", "F", "F", "F"]]


def test_input_validation(small_corpus):
    est = DisfluencyTagger(**FAST)
    with pytest.raises(NotFittedError):
        est.predict(["a b"])
    with pytest.raises(ValueError):
        est.fit([["a", "b"]], [["D"]])
    with pytest.raises(ValueError):
        est.fit([["a", "b"]], [["D", "F"], ["F"]])
    with pytest.raises(ValueError):
        DisfluencyTagger(**FAST, aux_tasks="ner").fit([["a"]], [["F"]])
    with pytest.raises(ValueError):
        DisfluencyTagger(**FAST, aux_tasks="chunk").fit(small_corpus)
    with pytest.raises(TypeError):
        est.fit("one sentence only")
    with pytest.raises(ValueError):
        est.fit([[]])


def test_fit_is_deterministic(small_corpus):
    a = DisfluencyTagger(**FAST, seed=3).fit(small_corpus[:30], eval_set=small_corpus[30:])
    b = DisfluencyTagger(**FAST, seed=3).fit(small_corpus[:30], eval_set=small_corpus[30:])
    assert a.history_ == b.history_
