"""``dfl`` command-line interface.

Exit codes: 0 success, 1 domain error (parse, shape, non-finite loss),
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import checkpoint
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config, parse_floats
from .corpus import (DEV, DISFL, FLUENT, OTHER, POS, TEST, TRAIN, UNK_POS, CorpusError,
                     Gazetteer, ParseError, Sentence, SynthConfig, Tagset, Token, Vocab,
                     DEFAULT_GAZETTEER, corpus_stats, default_tagsets, format_conll,
                     gazetteer_tag, parse_bracketed, parse_conll, read_bracketed, read_conll_file,
                     split_of_filename, synth_generate)
from .evaluation import ablation
from .multitask import TrainingError, alpha_sweep, build_model, strip_aux, train

log = logging.getLogger("dfl")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
EPOCH_HEADER = "epoch,train_loss,dev_p,dev_r,dev_f1"


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"dfl: error: {msg}", file=sys.stderr)


# -- prepare / synth / stats --------------------------------------------------------


def _load_gazetteer(source: str | None) -> Gazetteer | None:
    if source is None:
        return None
    if source == "builtin":
        return Gazetteer(dict(DEFAULT_GAZETTEER))
    with open(source, encoding="utf-8") as fh:
        return Gazetteer.read(fh)


def cmd_prepare(args) -> int:
    src = Path(args.input)
    if not src.is_dir():
        raise UsageError(f"input directory not found: {src}")
    files = sorted(p for p in src.iterdir() if p.is_file())
    if not files:
        raise UsageError("no input files")
    gaz = _load_gazetteer(args.gazetteer)
    splits: dict[str, list[Sentence]] = {TRAIN: [], DEV: [], TEST: []}
    manifest = []
    errors = 0
    skipped = 0
    for path in files:
        split = split_of_filename(path.name)
        if split == OTHER:
            skipped += 1
            log.warning("%s matches no split pattern; skipped", path.name)
            manifest.append((path.name, OTHER, 0))
            continue
        sents = []
        with open(path, encoding="utf-8") as fh:
            if args.format == "conll":
                try:
                    sents = parse_conll(fh, path.name)
                except ParseError as exc:
                    print(f"{path.name}:{exc.line}: {exc}", file=sys.stderr)
                    errors += 1
            else:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        sents.append(parse_bracketed(line.rstrip("\n"), path.name))
                    except CorpusError as exc:
                        print(f"{path.name}:{lineno}: {exc}", file=sys.stderr)
                        errors += 1
        if gaz is not None:
            sents = [gazetteer_tag(s, gaz) for s in sents]
        splits[split].extend(sents)
        manifest.append((path.name, split, len(sents)))
    if skipped:
        print(f"warning: {skipped} file(s) matched no split and were excluded", file=sys.stderr)
    if errors:
        _err(f"{errors} unparseable record(s); nothing written")
        return EXIT_DOMAIN
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, sents in splits.items():
        (out / f"{split.lower()}.conll").write_text(format_conll(sents), encoding="utf-8")
    (out / "splits.tsv").write_text(
        "file\tsplit\tsentences\n" + "".join(f"{n}\t{s}\t{k}\n" for n, s, k in manifest),
        encoding="utf-8")
    print(" ".join(f"{s.lower()}={len(v)}" for s, v in splits.items()))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfig(seed=args.seed, num_sentences=args.size, p_repeat=args.p_repeat,
                      p_correct=args.p_correct, p_filler=args.p_filler)
    text = f"# dfl synth seed={args.seed} size={args.size}\n" + format_conll(synth_generate(cfg))
    Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def _read_corpus(path, fmt="conll") -> list[Sentence]:
    if fmt == "conll":
        return read_conll_file(path)
    with open(path, encoding="utf-8") as fh:
        return read_bracketed(fh, str(path))


def cmd_stats(args) -> int:
    sents = _read_corpus(args.corpus, args.format)
    if not sents:
        raise CorpusError("corpus is empty")
    sys.stdout.write(corpus_stats(sents).format())
    return EXIT_OK


# -- training commands ---------------------------------------------------------------


def _load_run(args, require=("train", "dev")) -> RunConfig:
    cfg = load_config(args.config, require)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _vocab_and_tagsets(cfg: RunConfig, train_set):
    vocab = None
    if cfg.vocab_path is not None:
        words = [w.strip() for w in cfg.vocab_path.read_text(encoding="utf-8").splitlines() if w.strip()]
        vocab = Vocab(("<pad>", "<unk>", *[w for w in words if w not in ("<pad>", "<unk>")]))
    tagsets = default_tagsets(train_set)
    if cfg.pos_tagset_path is not None:
        labels = [x.strip() for x in cfg.pos_tagset_path.read_text(encoding="utf-8").splitlines()
                  if x.strip() and x.strip() != UNK_POS]
        tagsets[POS] = Tagset(POS, (*labels, UNK_POS))
    return vocab, tagsets


def cmd_train(args) -> int:
    cfg = _load_run(args)
    train_set, dev_set = read_conll_file(cfg.train_path), read_conll_file(cfg.dev_path)
    vocab, tagsets = _vocab_and_tagsets(cfg, train_set)
    model = build_model(train_set, cfg.encoder, cfg.train.aux_tasks, cfg.train.seed,
                        cfg.min_word_freq, vocab=vocab, tagsets=tagsets)
    res = train(model, train_set, dev_set, cfg.train,
                progress=lambda r: print(f"epoch {r.epoch} loss {r.train_loss:.4f} "
                                         f"dev_f1 {r.dev_f1:.4f}", file=sys.stderr))
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    meta = {"run_config": cfg.snapshot(), "alpha": cfg.train.alpha,
            "aux_tasks": list(cfg.train.aux_tasks), "best_dev_f1": res.best_dev_f1,
            "best_epoch": res.best_epoch}
    checkpoint.save(res.model, out / "model.ckpt", meta)
    lines = [EPOCH_HEADER] + [f"{r.epoch},{r.train_loss:.6f},{r.dev_p:.6f},{r.dev_r:.6f},{r.dev_f1:.6f}"
                              for r in res.log]
    (out / "epochs.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'model.ckpt'} (best dev F1 "
          f"{'n/a' if res.best_dev_f1 is None else f'{res.best_dev_f1:.4f}'})")
    return EXIT_OK


def _load_ckpt(path):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return checkpoint.load(path)


def cmd_eval(args) -> int:
    model, meta = _load_ckpt(args.ckpt)
    if args.strip_aux:
        model = strip_aux(model)
    test = read_conll_file(args.test)
    m = model.evaluate(test)
    report = {"checkpoint": str(args.ckpt), "test": str(args.test), "sentences": len(test),
              **m.as_dict()}
    text = json.dumps(report, sort_keys=True, indent=2)
    print(f"P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f}", file=sys.stderr)
    print(text)
    if args.json:
        Path(args.json).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def _alphas(value: str) -> list[float]:
    try:
        alphas = parse_floats(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed alpha list: {value!r}") from None
    if not alphas or any(a < 0 for a in alphas):
        raise argparse.ArgumentTypeError(f"alphas must be non-negative numbers: {value!r}")
    return alphas


def cmd_sweep(args) -> int:
    cfg = _load_run(args)
    train_set, dev_set = read_conll_file(cfg.train_path), read_conll_file(cfg.dev_path)
    res = alpha_sweep(train_set, dev_set, cfg.train, args.alphas, cfg.seeds, cfg.encoder,
                      cfg.min_word_freq)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    text = res.to_csv()
    (cfg.output_dir / "sweep.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"best alpha {res.best_alpha:g} (mean dev F1 {res.mean_f1[res.best_alpha]:.4f})",
          file=sys.stderr)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_run(args, require=("train", "dev", "test"))
    sets = [read_conll_file(p) for p in (cfg.train_path, cfg.dev_path, cfg.test_path)]
    report = ablation(*sets, cfg.train, cfg.seeds, cfg.encoder, cfg.min_word_freq)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    text = report.format()
    (cfg.output_dir / "ablation.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_tag(args) -> int:
    model, _ = _load_ckpt(args.ckpt)
    model = strip_aux(model)
    with open(args.input, encoding="utf-8") as fh:
        lines = [ln.split() for ln in fh]
    sents = [Sentence(tuple(Token(w) for w in words)) for words in lines if words]
    long = sum(len(s) > model.config.max_len for s in sents)
    if long:
        print(f"warning: {long} sentence(s) longer than max_len={model.config.max_len}; "
              f"overflow tokens tagged {FLUENT}", file=sys.stderr)
    tags = iter(model.predict(sents))
    out = []
    for words in lines:
        if words:
            out.append(" ".join(f"{w}/{t}" for w, t in zip(words, next(tags))))
    sys.stdout.write("".join(line + "\n" for line in out))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfl", description="Multi-task CRF disfluency detection.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="split annotated files into train/dev/test CoNLL")
    s.add_argument("--input", required=True)
    s.add_argument("--format", choices=("bracketed", "conll"), default="bracketed")
    s.add_argument("--out", required=True)
    s.add_argument("--gazetteer", help="phrase<TAB>TYPE file, or 'builtin'")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--p-repeat", type=float, default=SynthConfig.p_repeat)
    s.add_argument("--p-correct", type=float, default=SynthConfig.p_correct)
    s.add_argument("--p-filler", type=float, default=SynthConfig.p_filler)
    s.set_defaults(func=cmd_synth)

    for name, func, helptext in (("train", cmd_train, "train one model"),
                                 ("ablate", cmd_ablate, "run the auxiliary-task ablation")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        s.set_defaults(func=func)

    s = sub.add_parser("sweep", help="train over a list of alpha values")
    s.add_argument("--config", required=True)
    s.add_argument("--alphas", type=_alphas, required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("eval", help="score a checkpoint on a CoNLL test file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--strip-aux", action="store_true")
    s.add_argument("--json", help="also write the JSON report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("tag", help="tag whitespace-tokenised sentences, one per line")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_tag)

    s = sub.add_parser("stats", help="disfluency statistics of a corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--format", choices=("bracketed", "conll"), default="conll")
    s.set_defaults(func=cmd_stats)
    return p


def _threads() -> int:
    raw = os.environ.get("DFL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"DFL_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("DFL_THREADS must be >= 1")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except (UsageError, ConfigError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (CorpusError, CheckpointError, TrainingError, ValueError) as exc:
        _err(str(exc))
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
