"""Linear-chain CRF: log-partition, gold-path NLL with gradients, Viterbi.

A path ``y`` over ``n`` positions scores::

    s[y_0] + sum_t E[t, y_t] + sum_t T[y_t, y_{t+1}] + e[y_{n-1}]

``T[i, j]`` is the score of label ``j`` following label ``i``. Everything is
computed in log space. The single-sentence functions are the reference
implementation; the ``batch_*`` variants handle right-padded batches and are
what training uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass
class CrfHead:
    task: str
    W: np.ndarray  # (d_model, L) emission projection
    b: np.ndarray  # (L,)
    T: np.ndarray  # (L, L)
    s: np.ndarray  # (L,)
    e: np.ndarray  # (L,)

    @property
    def num_labels(self) -> int:
        return self.b.shape[0]

    def named_params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "T": self.T, "s": self.s, "e": self.e}

    @classmethod
    def init(cls, task: str, d_model: int, num_labels: int, rng: np.random.Generator,
             dtype=np.float32) -> "CrfHead":
        bound = np.sqrt(6.0 / (d_model + num_labels))
        W = rng.uniform(-bound, bound, size=(d_model, num_labels)).astype(dtype)
        z = lambda *shape: np.zeros(shape, dtype=dtype)  # noqa: E731
        return cls(task, W, z(num_labels), z(num_labels, num_labels), z(num_labels), z(num_labels))


def emissions(head: CrfHead, H: np.ndarray) -> np.ndarray:
    """Emission scores ``H @ W + b`` for H of shape (..., d_model)."""
    if H.shape[-1] != head.W.shape[0]:
        raise ValueError(f"H has feature dim {H.shape[-1]}, head expects {head.W.shape[0]}")
    return H @ head.W + head.b


def path_score(E, T, s, e, path) -> float:
    path = np.asarray(path)
    n = len(path)
    score = s[path[0]] + E[np.arange(n), path].sum() + e[path[-1]]
    if n > 1:
        score += T[path[:-1], path[1:]].sum()
    return float(score)


def _forward(E, T, s):
    n, L = E.shape
    alpha = np.empty((n, L), dtype=np.result_type(E, T, s))
    alpha[0] = s + E[0]
    for t in range(1, n):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + T, axis=0) + E[t]
    return alpha


def _backward(E, T, e):
    n, L = E.shape
    beta = np.empty((n, L), dtype=np.result_type(E, T, e))
    beta[-1] = e
    for t in range(n - 2, -1, -1):
        beta[t] = logsumexp(T + (E[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(E, T, s, e) -> float:
    E = np.asarray(E)
    if E.ndim != 2 or E.shape[0] < 1:
        raise ValueError("emissions must have shape (n >= 1, L)")
    alpha = _forward(E, T, s)
    return float(logsumexp(alpha[-1] + e))


def nll(E, T, s, e, gold):
    """Negative log-likelihood of ``gold`` and its gradients.

    Returns ``(loss, dE, dT, ds, de)``; each gradient is expected minus
    observed feature counts.
    """
    E = np.asarray(E)
    n, L = E.shape
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (n,) or (gold < 0).any() or (gold >= L).any():
        raise ValueError("gold path must hold n label indices in [0, L)")
    alpha = _forward(E, T, s)
    beta = _backward(E, T, e)
    logz = logsumexp(alpha[-1] + e)
    loss = float(logz - path_score(E, T, s, e, gold))

    marg = np.exp(alpha + beta - logz)
    onehot = np.zeros_like(marg)
    onehot[np.arange(n), gold] = 1.0
    dE = marg - onehot
    ds = marg[0] - onehot[0]
    de = marg[-1] - onehot[-1]
    dT = np.zeros((L, L), dtype=marg.dtype)
    for t in range(n - 1):
        dT += np.exp(alpha[t][:, None] + T + (E[t + 1] + beta[t + 1])[None, :] - logz)
    np.add.at(dT, (gold[:-1], gold[1:]), -1.0)
    return loss, dE, dT, ds, de


def viterbi(E, T, s, e):
    """Highest-scoring path and its score.

    Ties resolve to the lexicographically smallest path: at each position the
    smallest label that still admits an optimal completion is taken.
    """
    E = np.asarray(E)
    n, L = E.shape
    if n < 1:
        raise ValueError("need at least one position")
    # suffix[t, j]: best score of positions t+1.. given y_t = j, stop score included
    suffix = np.empty((n, L), dtype=np.result_type(E, T, e))
    suffix[-1] = e
    for t in range(n - 2, -1, -1):
        suffix[t] = np.max(T + (E[t + 1] + suffix[t + 1])[None, :], axis=1)
    path = np.empty(n, dtype=np.int64)
    path[0] = int(np.argmax(s + E[0] + suffix[0]))
    for t in range(1, n):
        path[t] = int(np.argmax(T[path[t - 1]] + E[t] + suffix[t]))
    return path, path_score(E, T, s, e, path)


# -- batched ---------------------------------------------------------------------


def batch_nll(E, mask, gold, T, s, e):
    """Summed NLL over a right-padded batch.

    ``E`` is (B, n, L), ``mask``/``gold`` are (B, n). Padded positions carry
    zero gradient. Returns ``(loss_sum, dE, dT, ds, de)``.
    """
    B, n, L = E.shape
    lengths = mask.sum(axis=1)
    if (lengths < 1).any():
        raise ValueError("every sequence needs at least one real token")
    if ((gold[mask] < 0) | (gold[mask] >= L)).any():
        raise ValueError("gold label index out of range")
    rows = np.arange(B)
    last = lengths - 1
    # Padded scores never reach the result; zero them so they cannot overflow either.
    E = np.where(mask[:, :, None], E, 0)

    alpha = np.empty((n, B, L), dtype=E.dtype)
    alpha[0] = s + E[:, 0]
    for t in range(1, n):
        step = logsumexp(alpha[t - 1][:, :, None] + T, axis=1) + E[:, t]
        alpha[t] = np.where(mask[:, t, None], step, alpha[t - 1])
    logz = logsumexp(alpha[last, rows] + e, axis=1)

    beta = np.empty((n, B, L), dtype=E.dtype)
    beta[n - 1] = e
    for t in range(n - 2, -1, -1):
        step = logsumexp(T[None] + (E[:, t + 1] + beta[t + 1])[:, None, :], axis=2)
        beta[t] = np.where(mask[:, t + 1, None], step, e)

    g = np.where(mask, gold, 0)
    gold_score = s[g[:, 0]] + e[g[rows, last]]
    gold_score = gold_score + (np.take_along_axis(E, g[:, :, None], axis=2)[:, :, 0] * mask).sum(1)
    pair_mask = mask[:, 1:]
    if n > 1:
        gold_score = gold_score + (T[g[:, :-1], g[:, 1:]] * pair_mask).sum(1)
    loss = float((logz - gold_score).sum())

    marg = np.exp(alpha.transpose(1, 0, 2) + beta.transpose(1, 0, 2) - logz[:, None, None])
    marg *= mask[:, :, None]
    onehot = np.zeros_like(marg)
    np.put_along_axis(onehot, g[:, :, None], 1.0, axis=2)
    onehot *= mask[:, :, None]
    dE = marg - onehot
    ds = dE[:, 0].sum(0)
    de = dE[rows, last].sum(0)
    dT = np.zeros((L, L), dtype=E.dtype)
    if n > 1:
        a = alpha[:-1].transpose(1, 0, 2)[:, :, :, None]  # (B, n-1, L, 1)
        bE = (E[:, 1:] + beta[1:].transpose(1, 0, 2))[:, :, None, :]
        xi = np.exp(a + T + bE - logz[:, None, None, None]) * pair_mask[:, :, None, None]
        dT = xi.sum(axis=(0, 1))
        gi, gj = g[:, :-1][pair_mask], g[:, 1:][pair_mask]
        np.add.at(dT, (gi, gj), -1.0)
    return loss, dE, dT, ds, de


def batch_viterbi(E, mask, T, s, e) -> list[np.ndarray]:
    lengths = mask.sum(axis=1)
    return [viterbi(E[b, :k], T, s, e)[0] for b, k in enumerate(lengths)]
