"""Run configuration: an INI-style ``key = value`` file with one section per concern.

Example::

    [encoder]
    num_layers = 2
    num_heads = 8
    d_model = 32

    [train]
    alpha = 0.1
    aux_tasks = ner,pos
    epochs = 20

    [corpus]
    train = data/train.conll
    dev = data/dev.conll

    [output]
    dir = runs/alpha0.1

Relative paths are resolved against the config file's directory. Unknown
sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .multitask import AUX_TASKS, TrainConfig
from .nn import EncoderConfig


class ConfigError(ValueError):
    pass


def parse_tasks(value: str) -> tuple[str, ...]:
    value = value.strip().lower()
    if value in ("", "none"):
        return ()
    tasks = tuple(t.strip().upper() for t in value.split(","))
    bad = [t for t in tasks if t not in AUX_TASKS]
    if bad:
        raise ValueError(f"unknown auxiliary task(s) {bad}; expected ner and/or pos")
    return tuple(t for t in AUX_TASKS if t in tasks)


def parse_floats(value: str) -> list[float]:
    return [float(x) for x in value.split(",") if x.strip()]


def _ints(value: str) -> tuple[int, ...]:
    return tuple(int(x) for x in value.split(",") if x.strip())


def _betas(value: str) -> tuple[float, float]:
    b = parse_floats(value)
    if len(b) != 2:
        raise ValueError("betas needs two comma-separated values")
    return b[0], b[1]


_ENCODER_KEYS: dict[str, Callable[[str], Any]] = {
    "num_layers": int, "num_heads": int, "d_model": int, "d_ff": int,
    "dropout_rate": float, "max_len": int,
}
_TRAIN_KEYS: dict[str, Callable[[str], Any]] = {
    "alpha": float, "learning_rate": float, "batch_size": int, "epochs": int, "seed": int,
    "betas": _betas, "eps": float, "grad_clip_norm": float, "aux_tasks": parse_tasks,
    "seeds": _ints, "min_word_freq": int,
}
_PATH_KEYS = {"corpus": ("train", "dev", "test", "vocab", "pos_tagset"), "output": ("dir",)}


@dataclass
class RunConfig:
    encoder: dict[str, Any] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    min_word_freq: int = 2
    train_path: Path | None = None
    dev_path: Path | None = None
    test_path: Path | None = None
    vocab_path: Path | None = None
    pos_tagset_path: Path | None = None
    output_dir: Path = Path("runs")

    def snapshot(self) -> dict[str, Any]:
        """JSON-friendly copy for checkpoint metadata."""
        tr = dataclasses.asdict(self.train)
        tr["betas"] = list(tr["betas"])
        tr["aux_tasks"] = list(tr["aux_tasks"])
        paths = {k: (str(getattr(self, k)) if getattr(self, k) is not None else None)
                 for k in ("train_path", "dev_path", "test_path", "vocab_path",
                           "pos_tagset_path", "output_dir")}
        return {"encoder": dict(self.encoder), "train": tr, "seeds": list(self.seeds),
                "min_word_freq": self.min_word_freq, **paths}

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, seed=seed),
                                   seeds=(seed,))


def _convert(section: str, key: str, raw: str, fn):
    try:
        return fn(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def load_config(path: str | Path, require: tuple[str, ...] = ("train", "dev")) -> RunConfig:
    """Parse and validate a run configuration.

    ``require`` names the corpus paths that must be present; every path given
    must exist.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    known = {"encoder": _ENCODER_KEYS, "train": _TRAIN_KEYS, **{k: dict.fromkeys(v) for k, v in _PATH_KEYS.items()}}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
        unknown = sorted(set(parser[section]) - set(known[section]))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")

    encoder = {}
    if parser.has_section("encoder"):
        for key, raw in parser["encoder"].items():
            encoder[key] = _convert("encoder", key, raw, _ENCODER_KEYS[key])
    try:
        EncoderConfig(vocab_size=1, **encoder)
    except ValueError as exc:
        raise ConfigError(f"[encoder] {exc}") from None
    train_kwargs: dict[str, Any] = {}
    extra: dict[str, Any] = {}
    if parser.has_section("train"):
        for key, raw in parser["train"].items():
            value = _convert("train", key, raw, _TRAIN_KEYS[key])
            (extra if key in ("seeds", "min_word_freq") else train_kwargs)[key] = value
    try:
        train = TrainConfig(**train_kwargs)
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from None

    base = path.parent
    paths: dict[str, Path | None] = {}
    for section, keys in _PATH_KEYS.items():
        for key in keys:
            raw = parser.get(section, key, fallback=None) if parser.has_section(section) else None
            paths[key] = (base / raw.strip()) if raw and raw.strip() else None
    for key in require:
        if paths.get(key) is None:
            raise ConfigError(f"[corpus] {key} is required")
    for key in _PATH_KEYS["corpus"]:
        if paths[key] is not None and not paths[key].exists():
            raise ConfigError(f"[corpus] {key}: path does not exist: {paths[key]}")

    cfg = RunConfig(
        encoder=encoder, train=train,
        seeds=extra.get("seeds", (1, 2, 3, 4, 5)),
        min_word_freq=extra.get("min_word_freq", 2),
        train_path=paths["train"], dev_path=paths["dev"], test_path=paths["test"],
        vocab_path=paths["vocab"], pos_tagset_path=paths["pos_tagset"],
        output_dir=paths["dir"] or base / "runs",
    )
    if not cfg.seeds:
        raise ConfigError("[train] seeds must not be empty")
    return cfg
