"""Shared encoder + per-task CRF heads trained on ``L_d + alpha * (L_ner + L_pos)``.

Only the disfluency head is used at inference; the auxiliary heads exist to
shape the shared encoder during training.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import crf
from .corpus import (DISFL, DISFLUENT, FLUENT, NER, POS, TASKS, Batch, Sentence, Tagset,
                     Vocab, default_tagsets, encode_batch)
from .metrics import Metrics, token_prf
from .nn import EncoderConfig, EncoderParams, encoder_backward, encoder_forward

logger = logging.getLogger(__name__)

AUX_TASKS = (NER, POS)


class TrainingError(RuntimeError):
    pass


def _head_rng(seed: int, task: str) -> np.random.Generator:
    # Separate streams so adding/removing a head never shifts any other init.
    return np.random.default_rng([seed, 1 + TASKS.index(task)])


@dataclass
class JointModel:
    encoder: EncoderParams
    heads: dict[str, crf.CrfHead]
    vocab: Vocab
    tagsets: dict[str, Tagset]

    def __post_init__(self):
        if DISFL not in self.heads:
            raise ValueError("the DISFL head is required")
        for task, head in self.heads.items():
            if head.num_labels != len(self.tagsets[task]):
                raise ValueError(f"{task} head has {head.num_labels} labels, "
                                 f"tagset has {len(self.tagsets[task])}")

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    def named_params(self) -> dict[str, np.ndarray]:
        out = {f"enc.{k}": v for k, v in self.encoder.tensors.items()}
        for task in TASKS:
            if task in self.heads:
                out.update({f"{task}.{k}": v for k, v in self.heads[task].named_params().items()})
        return out

    def copy(self) -> "JointModel":
        return copy.deepcopy(self)

    def encode(self, sentences: Sequence[Sentence], tasks: Iterable[str] = ()) -> Batch:
        return encode_batch(sentences, self.tagsets, self.vocab, self.config.max_len, tasks)

    def decode(self, batch: Batch) -> list[np.ndarray]:
        """Viterbi label indices of the disfluency head; aux heads are not touched."""
        H, _ = encoder_forward(self.encoder, batch.tokens, batch.mask)
        head = self.heads[DISFL]
        return crf.batch_viterbi(crf.emissions(head, H), batch.mask, head.T, head.s, head.e)

    def predict(self, sentences: Sequence[Sentence], batch_size: int = 64) -> list[list[str]]:
        """Disfluency labels per token. Tokens past ``max_len`` are labelled ``F``."""
        out: list[list[str] | None] = [None] * len(sentences)
        order = sorted(range(len(sentences)), key=lambda i: len(sentences[i]))
        labels = self.tagsets[DISFL].labels
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            paths = self.decode(self.encode([sentences[i] for i in idx]))
            for i, path in zip(idx, paths):
                tags = [labels[k] for k in path]
                out[i] = tags + [FLUENT] * (len(sentences[i]) - len(tags))
        return out  # type: ignore[return-value]

    def evaluate(self, sentences: Sequence[Sentence]) -> Metrics:
        return token_prf(self.predict(sentences), [s.labels(DISFL) for s in sentences])


def build_model(train: Sequence[Sentence], encoder: dict | None = None,
                aux_tasks: Iterable[str] = AUX_TASKS, seed: int = 1, min_freq: int = 2,
                dtype=np.float32, vocab: Vocab | None = None,
                tagsets: dict[str, Tagset] | None = None) -> JointModel:
    """Initialise a model whose vocabulary and POS tagset come from ``train``."""
    vocab = vocab or Vocab.build(train, min_freq)
    tagsets = tagsets or default_tagsets(train)
    cfg = EncoderConfig(vocab_size=len(vocab), **(encoder or {}))
    enc = EncoderParams.init(cfg, np.random.default_rng([seed, 0]), dtype=dtype)
    heads = {}
    for task in (DISFL, *[t for t in TASKS if t in set(aux_tasks)]):
        heads[task] = crf.CrfHead.init(task, cfg.d_model, len(tagsets[task]),
                                       _head_rng(seed, task), dtype=dtype)
    return JointModel(enc, heads, vocab, tagsets)


def strip_aux(model: JointModel) -> JointModel:
    """Inference copy holding only the encoder and the disfluency head."""
    return JointModel(copy.deepcopy(model.encoder), {DISFL: copy.deepcopy(model.heads[DISFL])},
                      model.vocab, model.tagsets)


# -- objective -------------------------------------------------------------------


@dataclass
class LossParts:
    total: float
    per_task: dict[str, float]


def combine_losses(disfl_loss: float, aux_losses: Sequence[float], alpha: float) -> float:
    """``L_d + alpha * (L_e + L_p)``; with no auxiliary losses this is ``L_d`` exactly."""
    if not aux_losses:
        return disfl_loss
    return disfl_loss + alpha * sum(aux_losses)


def joint_loss(model: JointModel, batch: Batch, alpha: float, aux_tasks: Iterable[str] = (),
               train_mode: bool = False, rng: np.random.Generator | None = None):
    """``L = L_d + alpha * sum(L_aux)`` and its gradient for every model tensor.

    Each task loss is the CRF NLL averaged over the sentences of the batch.
    Heads of tasks not in ``aux_tasks`` contribute nothing and get zero
    gradients. Returns ``(LossParts, grads)`` keyed like ``named_params``.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    aux = [t for t in AUX_TASKS if t in set(aux_tasks)]
    for task in (DISFL, *aux):
        if task not in model.heads:
            raise ValueError(f"model has no {task} head")
        if task not in batch.labels:
            raise ValueError(f"batch lacks gold labels for enabled task {task}")

    H, cache = encoder_forward(model.encoder, batch.tokens, batch.mask, train_mode, rng)
    B = batch.tokens.shape[0]
    dt = H.dtype.type
    inv_b = dt(1.0 / B)
    d = model.config.d_model
    grads: dict[str, np.ndarray] = {}
    per_task: dict[str, float] = {}
    dH = None
    for task in (DISFL, *aux):
        head = model.heads[task]
        weight = 1.0 if task == DISFL else alpha
        E = crf.emissions(head, H)
        loss, dE, dT, ds, de = crf.batch_nll(E, batch.mask, batch.labels[task], head.T, head.s, head.e)
        per_task[task] = loss / B
        w = dt(weight) * inv_b
        dE = dE * w
        L = head.num_labels
        grads[f"{task}.W"] = H.reshape(-1, d).T @ dE.reshape(-1, L)
        grads[f"{task}.b"] = dE.reshape(-1, L).sum(0)
        grads[f"{task}.T"] = dT * w
        grads[f"{task}.s"] = ds * w
        grads[f"{task}.e"] = de * w
        contrib = dE @ head.W.T
        dH = contrib if dH is None else dH + contrib

    total = combine_losses(per_task[DISFL], [per_task[t] for t in aux], alpha)
    for k, g in encoder_backward(model.encoder, cache, dH).items():
        grads[f"enc.{k}"] = g
    for task, head in model.heads.items():
        for k, v in head.named_params().items():
            grads.setdefault(f"{task}.{k}", np.zeros_like(v))
    return LossParts(float(total), per_task), grads


# -- optimiser -------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: param {p.shape}, grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= g.dtype.type(scale)
    return norm


# -- training ----------------------------------------------------------------------


@dataclass
class TrainConfig:
    alpha: float = 0.1
    learning_rate: float = 5e-5
    batch_size: int = 32
    epochs: int = 30
    seed: int = 1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip_norm: float = 5.0
    aux_tasks: tuple[str, ...] = AUX_TASKS

    def __post_init__(self):
        self.aux_tasks = tuple(t.upper() for t in self.aux_tasks)
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        bad = set(self.aux_tasks) - set(AUX_TASKS)
        if bad:
            raise ValueError(f"unknown auxiliary task(s): {sorted(bad)}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_p: float
    dev_r: float
    dev_f1: float


@dataclass
class TrainResult:
    model: JointModel
    log: list[EpochRecord] = field(default_factory=list)
    best_dev_f1: float | None = None
    best_epoch: int | None = None


def _batches(lengths: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    # Shuffle, sort by length inside windows of 20 batches, then shuffle batch order.
    perm = rng.permutation(len(lengths))
    window = batch_size * 20
    out = []
    for start in range(0, len(perm), window):
        chunk = perm[start : start + window]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        out.extend(chunk[i : i + batch_size] for i in range(0, len(chunk), batch_size))
    return [out[i] for i in rng.permutation(len(out))]


def _slice(full: Batch, idx: np.ndarray) -> Batch:
    width = int(full.mask[idx].sum(1).max())
    return Batch(full.tokens[idx, :width], full.mask[idx, :width],
                 {t: v[idx, :width] for t, v in full.labels.items()})


def train(model: JointModel, train_set: Sequence[Sentence], dev_set: Sequence[Sentence],
          cfg: TrainConfig, progress=None) -> TrainResult:
    """Adam training with best-dev-F1 model selection on the disfluency task.

    The returned model holds the parameters of the best epoch (the input model
    is updated in place). Everything random derives from ``cfg.seed``.
    """
    if not train_set or not dev_set:
        raise ValueError("train and dev splits must be non-empty")
    aux = tuple(t for t in AUX_TASKS if t in cfg.aux_tasks)
    result = TrainResult(model)
    if cfg.epochs == 0:
        return result
    full = model.encode(train_set, (DISFL, *aux))
    lengths = full.mask.sum(1)
    params = model.named_params()
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([cfg.seed, 99])
    best = None
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for idx in _batches(lengths, cfg.batch_size, rng):
            parts, grads = joint_loss(model, _slice(full, idx), cfg.alpha, aux, True, rng)
            if not math.isfinite(parts.total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {state.step + 1}")
            clip_grad_norm(grads, cfg.grad_clip_norm)
            adam_step(params, grads, state, cfg.learning_rate, cfg.betas, cfg.eps)
            total += parts.total * len(idx)
            count += len(idx)
        m = model.evaluate(dev_set)
        rec = EpochRecord(epoch, total / count, m.precision, m.recall, m.f1)
        result.log.append(rec)
        if progress is not None:
            progress(rec)
        logger.info("epoch %d loss %.4f dev P %.4f R %.4f F1 %.4f", epoch, rec.train_loss,
                    rec.dev_p, rec.dev_r, rec.dev_f1)
        if best is None or m.f1 > result.best_dev_f1:
            result.best_dev_f1, result.best_epoch = m.f1, epoch
            best = {k: v.copy() for k, v in params.items()}
    for k, v in best.items():
        params[k][...] = v
    return result


# -- alpha sweep -------------------------------------------------------------------

SWEEP_HEADER = ("alpha", "seed", "dev_f1", "dev_precision", "dev_recall")


@dataclass
class SweepResult:
    rows: list[tuple[float, int, float, float, float]]
    best_alpha: float
    mean_f1: dict[float, float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for a, s, f, p, r in self.rows:
            w.writerow([f"{a:.6f}", s, f"{f:.6f}", f"{p:.6f}", f"{r:.6f}"])
        return buf.getvalue()


def alpha_sweep(train_set: Sequence[Sentence], dev_set: Sequence[Sentence], base_cfg: TrainConfig,
                alphas: Sequence[float], seeds: Sequence[int] = (1, 2, 3, 4, 5),
                encoder: dict | None = None, min_freq: int = 2) -> SweepResult:
    """Train once per (alpha, seed) and report dev F1; best alpha by mean F1,
    ties going to the smaller alpha."""
    if not alphas:
        raise ValueError("alphas must be non-empty")
    rows = []
    for alpha in alphas:
        for seed in seeds:
            cfg = dataclasses.replace(base_cfg, alpha=alpha, seed=seed)
            try:
                model = build_model(train_set, encoder, cfg.aux_tasks, seed, min_freq)
                res = train(model, train_set, dev_set, cfg)
                m = res.model.evaluate(dev_set)
            except Exception as exc:
                raise TrainingError(f"alpha={alpha} seed={seed}: {exc}") from exc
            rows.append((float(alpha), int(seed), m.f1, m.precision, m.recall))
    means: dict[float, float] = {}
    for alpha in dict.fromkeys(float(a) for a in alphas):
        means[alpha] = float(np.mean([r[2] for r in rows if r[0] == alpha]))
    best = min(means, key=lambda a: (-means[a], a))
    return SweepResult(rows, best, means)
