"""Disfluency detection with a shared transformer encoder and NER/POS auxiliary CRF heads."""

from .corpus import Sentence, Tagset, Token, parse_bracketed, parse_conll, synth_generate
from .estimator import DisfluencyTagger
from .metrics import Metrics, average_runs, token_prf
from .multitask import JointModel, TrainConfig, build_model, joint_loss, strip_aux, train

__all__ = [
    "DisfluencyTagger", "JointModel", "Metrics", "Sentence", "Tagset", "Token", "TrainConfig",
    "average_runs", "build_model", "joint_loss", "parse_bracketed", "parse_conll",
    "strip_aux", "synth_generate", "token_prf", "train",
]

__version__ = "0.1.0"
