"""Token-level precision/recall/F1 with ``D`` as the positive class."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Sequence

from .corpus import DISFLUENT


def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


@dataclass(frozen=True)
class Metrics:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _div(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _div(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return _div(2 * p * r, p + r)

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def token_prf(pred: Sequence[Sequence[str]], gold: Sequence[Sequence[str]],
              positive: str = DISFLUENT) -> Metrics:
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted vs {len(gold)} gold sentences")
    tp = fp = fn = 0
    for i, (p_seq, g_seq) in enumerate(zip(pred, gold)):
        if len(p_seq) != len(g_seq):
            raise ValueError(f"sentence {i}: {len(p_seq)} predicted vs {len(g_seq)} gold labels")
        for p, g in zip(p_seq, g_seq):
            if p == positive:
                if g == positive:
                    tp += 1
                else:
                    fp += 1
            elif g == positive:
                fn += 1
    return Metrics(tp, fp, fn)


@dataclass(frozen=True)
class RunSummary:
    mean_p: float
    mean_r: float
    mean_f1: float
    std_p: float
    std_r: float
    std_f1: float
    n: int


def average_runs(runs: Sequence[Metrics]) -> RunSummary:
    """Mean and sample standard deviation of per-run P, R and F1."""
    if not runs:
        raise ValueError("need at least one run")

    def stats(xs):
        return statistics.fmean(xs), (statistics.stdev(xs) if len(xs) > 1 else 0.0)

    (mp, sp), (mr, sr), (mf, sf) = (stats([getattr(m, k) for m in runs])
                                    for k in ("precision", "recall", "f1"))
    return RunSummary(mp, mr, mf, sp, sr, sf, len(runs))
