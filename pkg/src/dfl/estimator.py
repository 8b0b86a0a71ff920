"""scikit-learn compatible wrapper around the joint model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import DISFL
from .metrics import token_prf
from .multitask import TrainConfig, build_model, strip_aux, train
from .nn import encoder_forward
from .validation import check_aux_tasks, check_sentences


class DisfluencyTagger(BaseEstimator):
    """Transformer-CRF disfluency tagger with optional NER/POS auxiliary heads.

    ``fit`` takes sentences carrying gold labels (:class:`dfl.corpus.Sentence`)
    or plain token lists plus ``y`` disfluency label lists (single-task only).
    ``predict`` returns one ``"D"``/``"F"`` list per sentence, ``transform``
    the encoder's contextual vectors, and ``score`` the token-level F1 of the
    disfluent class.

    Parameters mirror :class:`dfl.nn.EncoderConfig` and
    :class:`dfl.multitask.TrainConfig`; ``aux_tasks`` accepts ``"ner,pos"``,
    ``("NER",)``, ``"none"`` and so on.
    """

    def __init__(self, num_layers=2, num_heads=8, d_model=128, d_ff=None, dropout_rate=0.1,
                 max_len=256, alpha=0.1, aux_tasks="ner,pos", learning_rate=5e-5,
                 batch_size=32, epochs=30, grad_clip_norm=5.0, min_word_freq=2, seed=1):
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.d_model = d_model
        self.d_ff = d_ff
        self.dropout_rate = dropout_rate
        self.max_len = max_len
        self.alpha = alpha
        self.aux_tasks = aux_tasks
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.grad_clip_norm = grad_clip_norm
        self.min_word_freq = min_word_freq
        self.seed = seed

    def _encoder_settings(self):
        return dict(num_layers=self.num_layers, num_heads=self.num_heads, d_model=self.d_model,
                    d_ff=self.d_ff, dropout_rate=self.dropout_rate, max_len=self.max_len)

    def fit(self, X, y=None, eval_set=None):
        """Train on ``X``; ``eval_set`` (default: the training data) drives
        best-epoch selection."""
        sents = check_sentences(X, y)
        aux = check_aux_tasks(self.aux_tasks)
        if y is not None and aux:
            raise ValueError("auxiliary tasks need Sentence inputs carrying NER/POS labels")
        dev = check_sentences(eval_set) if eval_set is not None else sents
        cfg = TrainConfig(alpha=self.alpha, learning_rate=self.learning_rate,
                          batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
                          grad_clip_norm=self.grad_clip_norm, aux_tasks=aux)
        model = build_model(sents, self._encoder_settings(), aux, self.seed, self.min_word_freq)
        result = train(model, sents, dev, cfg)
        self.model_ = strip_aux(result.model)
        self.full_model_ = result.model
        self.history_ = result.log
        self.best_dev_f1_ = result.best_dev_f1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_sentences(X))

    def transform(self, X):
        """Contextual encoder output, one ``(n_tokens, d_model)`` array per sentence."""
        check_is_fitted(self, "model_")
        out = []
        for s in check_sentences(X):
            batch = self.model_.encode([s])
            H, _ = encoder_forward(self.model_.encoder, batch.tokens, batch.mask)
            out.append(np.asarray(H[0]))
        return out

    def score(self, X, y=None):
        sents = check_sentences(X, y)
        return token_prf(self.predict(sents), [s.labels(DISFL) for s in sents]).f1
