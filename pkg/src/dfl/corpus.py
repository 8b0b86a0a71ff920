"""Disfluency-annotated corpora: data types, readers/writers, synthesis and batching.

Two on-disk formats are supported:

* bracketed lines, e.g. ``[ I/prp want/vbp + {um/uh} I/prp need/vbp ] a/dt flight/nn``
  where the tokens left of ``+`` form the reparandum (labelled ``D``) and
  everything else, interregnum and repair included, is fluent (``F``);
* a four-column CoNLL-style TSV ``text pos ner disfl`` with every sentence
  terminated by one blank line.
"""

from __future__ import annotations

import fnmatch
import io
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

DISFL = "DISFL"
NER = "NER"
POS = "POS"
TASKS = (DISFL, NER, POS)

FLUENT = "F"
DISFLUENT = "D"
ENTITY_TYPES = ("LOC", "MISC", "ORG", "PER")
NER_LABELS = ("O",) + tuple(f"{p}-{t}" for t in ENTITY_TYPES for p in ("B", "I"))
UNK_POS = "<unk-pos>"
MISSING_POS = "UNK"
PAD = "<pad>"
UNK = "<unk>"

_NER_RE = re.compile(r"^(O|[BI]-(LOC|MISC|ORG|PER))$")


class CorpusError(ValueError):
    """Malformed corpus input."""


class ParseError(CorpusError):
    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        self.offset = offset
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass(frozen=True)
class Token:
    text: str
    pos: str = MISSING_POS
    ner: str = "O"
    disfl: str = FLUENT

    def __post_init__(self):
        if not self.text or any(c.isspace() for c in self.text):
            raise CorpusError(f"invalid token text {self.text!r}")
        if not self.pos or any(c.isspace() for c in self.pos):
            raise CorpusError(f"invalid POS tag {self.pos!r}")
        if not _NER_RE.match(self.ner):
            raise CorpusError(f"invalid NER tag {self.ner!r}")
        if self.disfl not in (FLUENT, DISFLUENT):
            raise CorpusError(f"invalid disfluency tag {self.disfl!r}")


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise CorpusError("sentence must contain at least one token")
        check_bio([t.ner for t in self.tokens])

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def words(self) -> list[str]:
        return [t.text for t in self.tokens]

    def labels(self, task: str) -> list[str]:
        attr = {DISFL: "disfl", NER: "ner", POS: "pos"}[task]
        return [getattr(t, attr) for t in self.tokens]

    def with_labels(self, task: str, labels: Sequence[str]) -> "Sentence":
        if len(labels) != len(self.tokens):
            raise CorpusError("label sequence length does not match sentence")
        attr = {DISFL: "disfl", NER: "ner", POS: "pos"}[task]
        toks = [Token(**{**t.__dict__, attr: lab}) for t, lab in zip(self.tokens, labels)]
        return Sentence(tuple(toks), self.source_id)


def check_bio(tags: Sequence[str]) -> None:
    """Raise if an ``I-X`` tag is not preceded by ``B-X`` or ``I-X``."""
    prev = "O"
    for i, tag in enumerate(tags):
        if tag.startswith("I-") and prev[2:] != tag[2:]:
            raise CorpusError(f"BIO violation at token {i}: {prev} -> {tag}")
        prev = tag


# -- tagsets and vocabulary ----------------------------------------------------


@dataclass
class Tagset:
    task: str
    labels: tuple[str, ...]
    index_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if len(set(self.labels)) != len(self.labels):
            raise CorpusError(f"duplicate labels in {self.task} tagset")
        self.index_of = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def encode(self, label: str) -> int:
        try:
            return self.index_of[label]
        except KeyError:
            if self.task == POS and UNK_POS in self.index_of:
                return self.index_of[UNK_POS]
            raise CorpusError(f"label {label!r} not in {self.task} tagset") from None

    def decode(self, index: int) -> str:
        return self.labels[index]

    @classmethod
    def disfl(cls) -> "Tagset":
        return cls(DISFL, (FLUENT, DISFLUENT))

    @classmethod
    def ner(cls) -> "Tagset":
        return cls(NER, NER_LABELS)

    @classmethod
    def pos_from(cls, sentences: Iterable[Sentence]) -> "Tagset":
        seen = sorted({t.pos for s in sentences for t in s.tokens} - {UNK_POS})
        return cls(POS, tuple(seen) + (UNK_POS,))


def default_tagsets(train: Iterable[Sentence]) -> dict[str, Tagset]:
    return {DISFL: Tagset.disfl(), NER: Tagset.ner(), POS: Tagset.pos_from(train)}


@dataclass
class Vocab:
    """Lowercased word inventory; index 0 is padding and 1 is the unknown word."""

    words: tuple[str, ...]
    index_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.words = tuple(self.words)
        if self.words[:2] != (PAD, UNK):
            raise CorpusError("vocabulary must start with <pad>, <unk>")
        self.index_of = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def lookup(self, word: str) -> int:
        return self.index_of.get(word.lower(), 1)

    @classmethod
    def build(cls, sentences: Iterable[Sentence], min_freq: int = 2) -> "Vocab":
        counts = Counter(t.text.lower() for s in sentences for t in s.tokens)
        kept = sorted(w for w, c in counts.items() if c >= min_freq and w not in (PAD, UNK))
        return cls((PAD, UNK, *kept))


# -- bracketed format ----------------------------------------------------------

_SYMBOLS = {"[", "]", "+", "{", "}"}


def _split_pos(item: str) -> tuple[str, str]:
    text, sep, pos = item.rpartition("/")
    if not sep or not text or not pos:
        return item, MISSING_POS
    return text, pos


def _bracket_items(line: str):
    """Whitespace items with interregnum braces split off (``{um/uh}`` -> ``{ um/uh }``)."""
    for m in re.finditer(r"\S+", line):
        item, off = m.group(), m.start()
        if item in _SYMBOLS:
            yield item, off
            continue
        if item.startswith("{"):
            yield "{", off
            item, off = item[1:], off + 1
        closing = item.endswith("}")
        if closing:
            item = item[:-1]
        if item:
            yield item, off
        if closing:
            yield "}", off + len(item)


class _BracketParser:
    def __init__(self, line: str):
        self.line = line
        self.items = list(_bracket_items(line))
        self.i = 0
        self.out: list[tuple[str, str, bool]] = []

    def peek(self):
        return self.items[self.i] if self.i < len(self.items) else (None, len(self.line))

    def take(self):
        item = self.peek()
        self.i += 1
        return item

    def parse(self) -> list[tuple[str, str, bool]]:
        self.sequence(disfluent=False, stop=())
        sym, off = self.peek()
        if sym is not None:
            raise ParseError(f"unexpected {sym!r}", offset=off)
        return self.out

    def sequence(self, disfluent: bool, stop: tuple[str, ...]) -> int:
        """Consume tokens and groups until a symbol in ``stop``; return token count."""
        count = 0
        while True:
            sym, off = self.peek()
            if sym is None or sym in stop:
                return count
            if sym == "[":
                self.take()
                count += self.group(disfluent, off)
            elif sym in _SYMBOLS:
                raise ParseError(f"unexpected {sym!r}", offset=off)
            else:
                self.take()
                self.out.append((*_split_pos(sym), disfluent))
                count += 1

    def group(self, disfluent: bool, start: int) -> int:
        n_rm = self.sequence(disfluent=True, stop=("+", "]"))
        sym, off = self.take()
        if sym != "+":
            if sym is None:
                raise ParseError("unbalanced '['", offset=start)
            raise ParseError("disfluency group without '+'", offset=off)
        if n_rm == 0:
            raise ParseError("empty reparandum", offset=off)
        n = n_rm
        if self.peek()[0] == "{":
            _, brace = self.take()
            while True:
                sym, off = self.take()
                if sym == "}":
                    break
                if sym is None:
                    raise ParseError("unbalanced '{'", offset=brace)
                if sym in _SYMBOLS:
                    raise ParseError(f"unexpected {sym!r} inside interregnum", offset=off)
                self.out.append((*_split_pos(sym), disfluent))
                n += 1
        n_rp = self.sequence(disfluent=disfluent, stop=("]",))
        sym, off = self.take()
        if sym is None:
            raise ParseError("unbalanced '['", offset=start)
        if n_rp == 0:
            raise ParseError("empty repair", offset=off)
        return n + n_rp


def parse_bracketed(line: str, source_id: str = "") -> Sentence:
    """Parse one bracketed-annotation line into a :class:`Sentence`.

    Raises :class:`ParseError` (with a character offset) on unbalanced
    brackets, a group lacking ``+`` or an empty reparandum/repair.
    """
    items = _BracketParser(line).parse()
    if not items:
        raise ParseError("empty sentence", offset=0)
    toks = [Token(text, pos, "O", DISFLUENT if d else FLUENT) for text, pos, d in items]
    return Sentence(tuple(toks), source_id)


def strip_annotation(line: str) -> list[str]:
    """Plain token sequence of a bracketed line (symbols and POS suffixes removed)."""
    return [_split_pos(w)[0] for w, _ in _bracket_items(line) if w not in _SYMBOLS]


def read_bracketed(stream: TextIO, source_id: str = "") -> list[Sentence]:
    out = []
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            out.append(parse_bracketed(line.rstrip("\n"), source_id))
        except ParseError as exc:
            raise ParseError(str(exc).rsplit(" (", 1)[0], offset=exc.offset, line=lineno) from None
        except CorpusError as exc:
            raise ParseError(str(exc), line=lineno) from None
    return out


# -- CoNLL format ----------------------------------------------------------------


def parse_conll(stream: TextIO | str, source_id: str = "") -> list[Sentence]:
    """Read the 4-column TSV format. Lines beginning with ``#`` and holding no
    TAB are comments and skipped."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    sentences: list[Sentence] = []
    block: list[Token] = []
    for lineno, raw in enumerate(stream, 1):
        line = raw.rstrip("\n")
        if not line:
            if block:
                sentences.append(_make_sentence(block, source_id, lineno))
                block = []
            continue
        if line.startswith("#") and "\t" not in line:
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise ParseError(f"expected 4 columns, got {len(cols)}", line=lineno)
        try:
            block.append(Token(*cols))
        except CorpusError as exc:
            raise ParseError(str(exc), line=lineno) from None
    if block:
        sentences.append(_make_sentence(block, source_id, lineno + 1))
    return sentences


def _make_sentence(block, source_id, lineno):
    try:
        return Sentence(tuple(block), source_id)
    except CorpusError as exc:
        raise ParseError(str(exc), line=lineno) from None


def format_conll(sentences: Iterable[Sentence]) -> str:
    parts = []
    for s in sentences:
        parts.extend(f"{t.text}\t{t.pos}\t{t.ner}\t{t.disfl}\n" for t in s.tokens)
        parts.append("\n")
    return "".join(parts)


def write_conll(sentences: Iterable[Sentence], stream: TextIO) -> None:
    stream.write(format_conll(sentences))


def read_conll_file(path, source_id: str | None = None) -> list[Sentence]:
    with open(path, encoding="utf-8") as fh:
        return parse_conll(fh, source_id if source_id is not None else str(path))


# -- splits --------------------------------------------------------------------

TRAIN, DEV, TEST, OTHER = "TRAIN", "DEV", "TEST", "OTHER"
_SPLIT_PATTERNS = ((TRAIN, "sw[23]*.dff"), (DEV, "sw4[5-9]*.dff"), (TEST, "sw4[0-1]*.dff"))


def split_of_filename(name: str) -> str:
    for split, pattern in _SPLIT_PATTERNS:
        if fnmatch.fnmatchcase(name, pattern):
            return split
    return OTHER


# -- gazetteer -----------------------------------------------------------------


@dataclass
class Gazetteer:
    entries: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        norm = {}
        for phrase, etype in self.entries.items():
            key = " ".join(phrase.lower().split())
            if not key:
                raise CorpusError("empty gazetteer phrase")
            if etype not in ENTITY_TYPES:
                raise CorpusError(f"unknown entity type {etype!r}")
            if norm.get(key, etype) != etype:
                raise CorpusError(f"phrase {key!r} maps to two types")
            norm[key] = etype
        self.entries = norm
        self.max_words = max((len(k.split()) for k in norm), default=0)

    @classmethod
    def read(cls, stream: TextIO) -> "Gazetteer":
        entries: dict[str, str] = {}
        for lineno, line in enumerate(stream, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                phrase, etype = line.split("\t")
            except ValueError:
                raise ParseError("expected 'phrase<TAB>TYPE'", line=lineno) from None
            key = " ".join(phrase.lower().split())
            if entries.get(key, etype) != etype:
                raise ParseError(f"phrase {key!r} maps to two types", line=lineno)
            entries[key] = etype
        return cls(entries)


def gazetteer_tag(sentence: Sentence, g: Gazetteer) -> Sentence:
    """Overwrite NER tags with longest-leftmost gazetteer matches."""
    words = [w.lower() for w in sentence.words]
    tags = ["O"] * len(words)
    i = 0
    while i < len(words):
        for k in range(min(g.max_words, len(words) - i), 0, -1):
            etype = g.entries.get(" ".join(words[i : i + k]))
            if etype is not None:
                tags[i] = f"B-{etype}"
                tags[i + 1 : i + k] = [f"I-{etype}"] * (k - 1)
                i += k
                break
        else:
            i += 1
    return sentence.with_labels(NER, tags)


# -- synthetic corpus ----------------------------------------------------------

DEFAULT_LEXICON: dict[str, tuple[str, ...]] = {
    "prp": ("i", "you", "we", "they", "he", "she", "it"),
    "vbp": ("want", "need", "like", "have", "think", "know", "see", "get", "love", "take"),
    "vbd": ("wanted", "needed", "liked", "had", "saw", "got", "took", "loved", "found", "made"),
    "dt": ("a", "the", "this", "that", "some", "every"),
    "nn": ("flight", "ticket", "car", "house", "dog", "job", "school", "book", "meeting",
           "game", "week", "day", "movie", "team", "garden", "computer", "program", "kid"),
    "jj": ("big", "good", "new", "old", "nice", "long", "small", "cheap", "great", "bad"),
    "in": ("in", "on", "at", "for", "from", "with", "about"),
    "rb": ("really", "just", "actually", "probably", "always", "never"),
    "cc": ("and", "but", "so", "or"),
    ",": (",",),
    "uh": ("um", "uh", "er"),
}

DEFAULT_GAZETTEER = {
    "john": "PER", "mary smith": "PER", "mceneil": "PER", "bill clinton": "PER",
    "boston": "LOC", "new york": "LOC", "new york city": "LOC", "texas": "LOC", "dallas": "LOC",
    "ibm": "ORG", "red cross": "ORG", "general motors": "ORG",
    "christmas": "MISC", "english": "MISC", "olympics": "MISC",
}

_FILLER_POS = "uh"
_ENTITY_POS = "nnp"

# POS templates; "ENT" is a gazetteer phrase, parts in () are optional.
_CLAUSES = (
    ("prp", "(rb)", "vbp", "dt", "(jj)", "nn"),
    ("prp", "vbd", "dt", "(jj)", "nn", "(in)", "(dt)", "(nn)"),
    ("prp", "(rb)", "vbd", "in", "ENT"),
    ("prp", "vbp", "ENT"),
    ("dt", "nn", "vbd", "(rb)", "jj"),
    ("ENT", "vbd", "dt", "nn"),
    ("prp", "vbp", "prp", "vbd", "dt", "nn"),
)


def default_vocab() -> list[tuple[str, str]]:
    return [(w, pos) for pos, words in DEFAULT_LEXICON.items() for w in words]


@dataclass
class SynthConfig:
    seed: int = 0
    num_sentences: int = 100
    vocab: list[tuple[str, str]] = field(default_factory=default_vocab)
    gazetteer: Gazetteer = field(default_factory=lambda: Gazetteer(dict(DEFAULT_GAZETTEER)))
    p_repeat: float = 0.35
    p_correct: float = 0.35
    p_filler: float = 0.3

    def __post_init__(self):
        for name in ("p_repeat", "p_correct", "p_filler"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise CorpusError(f"{name} must be in [0, 1]")
        if self.p_repeat + self.p_correct > 1.0 + 1e-12:
            raise CorpusError("p_repeat + p_correct must not exceed 1")
        if self.num_sentences < 0:
            raise CorpusError("num_sentences must be non-negative")


def synth_generate(cfg: SynthConfig) -> list[Sentence]:
    """Generate a labelled corpus with repetition/correction disfluencies.

    Each sentence receives at most one disfluency. A repetition copies a span
    as its own reparandum; a correction prefixes the span with a reparandum of
    other words carrying the same POS sequence. Both may hold a filler
    interregnum. Output depends only on ``cfg``.
    """
    if not cfg.vocab:
        raise CorpusError("empty vocabulary")
    rng = np.random.default_rng(cfg.seed)
    by_pos: dict[str, list[str]] = {}
    for word, pos in cfg.vocab:
        by_pos.setdefault(pos, []).append(word)
    fillers = by_pos.get(_FILLER_POS, [])
    entities = sorted(cfg.gazetteer.entries)
    clauses = [c for c in _CLAUSES if _clause_ok(c, by_pos, entities)]

    out = []
    for k in range(cfg.num_sentences):
        words = _fluent_words(rng, clauses, by_pos, entities)
        u = rng.random()
        if u < cfg.p_repeat + cfg.p_correct:
            correct = u >= cfg.p_repeat
            filler = fillers and rng.random() < cfg.p_filler
            words = _insert_disfluency(rng, words, by_pos, correct, filler, fillers)
        toks = tuple(Token(w, p, "O", d) for w, p, d in words)
        out.append(gazetteer_tag(Sentence(toks, f"synth:{cfg.seed}:{k}"), cfg.gazetteer))
    return out


def _clause_ok(clause, by_pos, entities):
    for slot in clause:
        slot = slot.strip("()")
        if slot == "ENT" and not entities:
            return False
        if slot != "ENT" and slot not in by_pos:
            return False
    return True


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _clause_words(rng, clause, by_pos, entities):
    words = []
    for slot in clause:
        if slot.startswith("(") and rng.random() < 0.5:
            continue
        slot = slot.strip("()")
        if slot == "ENT":
            words.extend((w, _ENTITY_POS) for w in _pick(rng, entities).split())
        else:
            words.append((_pick(rng, by_pos[slot]), slot))
    return words


def _fluent_words(rng, clauses, by_pos, entities):
    if not clauses:
        pool = [(w, p) for p, ws in by_pos.items() if p != _FILLER_POS for w in ws] or [
            (w, p) for p, ws in by_pos.items() for w in ws
        ]
        n = int(rng.integers(3, 9))
        return [(*_pick(rng, pool), FLUENT) for _ in range(n)]
    words = _clause_words(rng, _pick(rng, clauses), by_pos, entities)
    if "cc" in by_pos and rng.random() < 0.3:
        if "," in by_pos:
            words.append((",", ","))
        words.append((_pick(rng, by_pos["cc"]), "cc"))
        words.extend(_clause_words(rng, _pick(rng, clauses), by_pos, entities))
    return [(w, p, FLUENT) for w, p in words]


def _insert_disfluency(rng, words, by_pos, correct, filler, fillers):
    n = len(words)
    span = min(n, int(rng.choice([1, 1, 2, 2, 3])))
    # Disfluencies cluster near the start of an utterance.
    start = int(min(rng.geometric(0.5) - 1, n - span))
    repair = words[start : start + span]
    if correct:
        rm = []
        for w, p, _ in repair:
            alts = [a for a in by_pos.get(p, ()) if a != w]
            rm.append((_pick(rng, alts) if alts else w, p, DISFLUENT))
    else:
        rm = [(w, p, DISFLUENT) for w, p, _ in repair]
    im = [(_pick(rng, fillers), _FILLER_POS, FLUENT)] if filler else []
    return words[:start] + rm + im + words[start:]


# -- statistics ----------------------------------------------------------------


@dataclass
class CorpusStats:
    num_sentences: int
    num_tokens: int
    num_disfluent: int
    disfluency_rate: float
    comma_prp_fraction: float
    entity_disfluency_overlap: int
    pos_histogram: dict[str, float]
    pos_counts: dict[str, int]

    def format(self) -> str:
        lines = [
            f"num_sentences={self.num_sentences}",
            f"num_tokens={self.num_tokens}",
            f"num_disfluent={self.num_disfluent}",
            f"disfluency_rate={self.disfluency_rate:.6f}",
            f"comma_prp_fraction={self.comma_prp_fraction:.6f}",
            f"entity_disfluency_overlap={self.entity_disfluency_overlap}",
            "pos_histogram",
            "pos,count,fraction",
        ]
        lines += [f"{p},{self.pos_counts[p]},{f:.6f}" for p, f in self.pos_histogram.items()]
        return "\n".join(lines) + "\n"


def corpus_stats(corpus: Sequence[Sentence]) -> CorpusStats:
    """POS histogram over disfluent tokens plus corpus-level rates."""
    if not corpus:
        raise CorpusError("corpus is empty")
    toks = [t for s in corpus for t in s.tokens]
    dis = [t for t in toks if t.disfl == DISFLUENT]
    counts = Counter(t.pos for t in dis)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    hist = {p: c / len(dis) for p, c in ordered}
    return CorpusStats(
        num_sentences=len(corpus),
        num_tokens=len(toks),
        num_disfluent=len(dis),
        disfluency_rate=len(dis) / len(toks),
        comma_prp_fraction=hist.get(",", 0.0) + hist.get("prp", 0.0),
        entity_disfluency_overlap=sum(t.ner != "O" for t in dis),
        pos_histogram=hist,
        pos_counts=dict(ordered),
    )


# -- batching ------------------------------------------------------------------


@dataclass
class Batch:
    tokens: np.ndarray  # (B, n) int64
    mask: np.ndarray  # (B, n) bool
    labels: dict[str, np.ndarray]  # task -> (B, n) int64, 0 on padding
    truncated: int = 0

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def encode_batch(
    sentences: Sequence[Sentence],
    tagsets: dict[str, Tagset],
    vocab: Vocab,
    max_len: int,
    tasks: Iterable[str] | None = None,
) -> Batch:
    """Index-encode and right-pad ``sentences`` to the longest one (at most ``max_len``)."""
    tasks = list(tagsets) if tasks is None else list(tasks)
    truncated = sum(len(s) > max_len for s in sentences)
    if truncated:
        logger.warning("truncated %d sentence(s) to max_len=%d", truncated, max_len)
    width = min(max((len(s) for s in sentences), default=0), max_len)
    B = len(sentences)
    tokens = np.zeros((B, width), dtype=np.int64)
    mask = np.zeros((B, width), dtype=bool)
    labels = {t: np.zeros((B, width), dtype=np.int64) for t in tasks}
    for b, s in enumerate(sentences):
        toks = s.tokens[:width]
        tokens[b, : len(toks)] = [vocab.lookup(t.text) for t in toks]
        mask[b, : len(toks)] = True
        for task in tasks:
            ts = tagsets[task]
            labels[task][b, : len(toks)] = [ts.encode(x) for x in s.labels(task)[:width]]
    return Batch(tokens, mask, labels, truncated)
