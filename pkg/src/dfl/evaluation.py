"""Multi-seed evaluation and the none / NER / POS / NER+POS ablation."""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import NER, POS, Sentence
from .metrics import Metrics, RunSummary, average_runs, token_prf  # noqa: F401  (re-export)
from .multitask import TrainConfig, TrainingError, build_model, train

ABLATION_SETTINGS: dict[str, tuple[str, ...]] = {
    "none": (),
    "ner": (NER,),
    "pos": (POS,),
    "ner+pos": (NER, POS),
}

# Published Transformer-CRF deltas (F1 points on Switchboard test), shown for reference only.
REFERENCE_DELTAS = {"ner": 1.1, "pos": 1.6, "ner+pos": 1.8}

ABLATION_HEADER = ("setting", "mean_p", "mean_r", "mean_f1", "std_f1", "delta_f1_vs_none")


@dataclass
class AblationRow:
    setting: str
    summary: RunSummary
    runs: list[Metrics]
    delta_f1: float


@dataclass
class AblationReport:
    rows: list[AblationRow]
    seeds: tuple[int, ...]
    alpha: dict[str, float]

    def row(self, setting: str) -> AblationRow:
        return next(r for r in self.rows if r.setting == setting)

    def format(self) -> str:
        buf = io.StringIO()
        ref = ", ".join(f"{k} +{v:.1f}" for k, v in REFERENCE_DELTAS.items())
        buf.write(f"# reference Transformer-CRF F1 deltas vs none (Switchboard test): {ref}\n")
        buf.write(f"# seeds: {','.join(map(str, self.seeds))}\n")
        buf.write(",".join(ABLATION_HEADER) + "\n")
        for r in self.rows:
            s = r.summary
            buf.write(f"{r.setting},{s.mean_p:.4f},{s.mean_r:.4f},{s.mean_f1:.4f},"
                      f"{s.std_f1:.4f},{r.delta_f1:.4f}\n")
        return buf.getvalue()


def ablation(train_set: Sequence[Sentence], dev_set: Sequence[Sentence],
             test_set: Sequence[Sentence], base_cfg: TrainConfig,
             seeds: Sequence[int] = (1, 2, 3, 4, 5), encoder: dict | None = None,
             min_freq: int = 2, alpha_overrides: Mapping[str, float] | None = None,
             progress=None) -> AblationReport:
    """Train every auxiliary setting over ``seeds``; report test-set scores."""
    alpha_overrides = dict(alpha_overrides or {})
    unknown = set(alpha_overrides) - set(ABLATION_SETTINGS)
    if unknown:
        raise ValueError(f"unknown ablation setting(s): {sorted(unknown)}")
    rows = []
    alphas = {}
    for setting, aux in ABLATION_SETTINGS.items():
        alpha = alpha_overrides.get(setting, base_cfg.alpha)
        alphas[setting] = alpha
        runs = []
        for seed in seeds:
            cfg = dataclasses.replace(base_cfg, alpha=alpha, seed=seed, aux_tasks=aux)
            try:
                model = build_model(train_set, encoder, aux, seed, min_freq)
                res = train(model, train_set, dev_set, cfg)
            except Exception as exc:
                raise TrainingError(f"setting={setting} seed={seed}: {exc}") from exc
            m = res.model.evaluate(test_set)
            runs.append(m)
            if progress is not None:
                progress(setting, seed, m)
        rows.append(AblationRow(setting, average_runs(runs), runs, 0.0))
    base = rows[0].summary.mean_f1
    for r in rows:
        r.delta_f1 = r.summary.mean_f1 - base
    return AblationReport(rows, tuple(seeds), alphas)
