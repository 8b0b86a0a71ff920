"""Input checking for the estimator API."""

from __future__ import annotations

from typing import Sequence

from .config import parse_tasks
from .corpus import DISFL, CorpusError, Sentence, Token


def as_sentence(x) -> Sentence:
    """Accept a Sentence, a whitespace-separated string or a list of word strings."""
    if isinstance(x, Sentence):
        return x
    if isinstance(x, str):
        words = x.split()
    else:
        words = list(x)
        if not all(isinstance(w, str) for w in words):
            raise TypeError("a sentence must be a Sentence, a string or a sequence of str")
    if not words:
        raise ValueError("empty sentence")
    return Sentence(tuple(Token(w) for w in words))


def check_sentences(X, y: Sequence[Sequence[str]] | None = None) -> list[Sentence]:
    """Normalise ``X`` to a list of :class:`Sentence`.

    When ``y`` is given it supplies the disfluency labels (``"D"``/``"F"``)
    and must align with ``X`` token by token.
    """
    if isinstance(X, (str, Sentence)):
        raise TypeError("X must be a sequence of sentences, not a single sentence")
    sents = [as_sentence(x) for x in X]
    if y is None:
        return sents
    y = list(y)
    if len(y) != len(sents):
        raise ValueError(f"X has {len(sents)} sentences but y has {len(y)} label sequences")
    try:
        return [s.with_labels(DISFL, list(labels)) for s, labels in zip(sents, y)]
    except CorpusError as exc:
        raise ValueError(str(exc)) from None


def check_aux_tasks(aux_tasks) -> tuple[str, ...]:
    if aux_tasks is None:
        return ()
    if isinstance(aux_tasks, str):
        return parse_tasks(aux_tasks)
    return parse_tasks(",".join(aux_tasks))
