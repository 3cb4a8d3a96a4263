"""Parallel and monolingual corpus loading, splitting, and statistics.

One sentence per line, UTF-8, LF line endings; a trailing newline at EOF
is optional. Lines are stored verbatim so that writing a corpus back
reproduces the input files byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .autodiff import RngState, fan_seed
from .errors import CorpusError

__all__ = [
    "LanguageTag", "SentencePair", "ParallelCorpus", "MonolingualCorpus",
    "CorpusStats", "register_language", "load_parallel", "load_monolingual",
    "save_parallel", "save_monolingual", "split", "stats",
]

_KNOWN_TAGS = {"kn", "ml", "ta", "te", "tu", "sn"}
_ALIASES = {"sa": "sn"}


def register_language(code: str):
    """Register an extension language tag."""
    if not code or not code.isalpha():
        raise CorpusError(f"bad language code {code!r}")
    _KNOWN_TAGS.add(code)


@dataclass(frozen=True)
class LanguageTag:
    code: str

    def __post_init__(self):
        code = _ALIASES.get(self.code, self.code)
        if code not in _KNOWN_TAGS:
            raise CorpusError(
                f"unknown language tag {self.code!r}; known: {sorted(_KNOWN_TAGS)} "
                f"(register extensions with register_language)")
        object.__setattr__(self, "code", code)

    def __str__(self):
        return self.code


@dataclass(frozen=True)
class SentencePair:
    source: str
    target: str
    synthetic: bool = False

    def __post_init__(self):
        for side in (self.source, self.target):
            if "\n" in side:
                raise CorpusError("sentence contains an embedded newline")
            if not side.strip():
                raise CorpusError("sentence is empty after trimming")


@dataclass
class ParallelCorpus:
    pairs: list
    src_lang: LanguageTag
    tgt_lang: LanguageTag
    n_rejected: int = 0

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def swapped(self) -> "ParallelCorpus":
        """Reverse translation direction (for reverse-model training)."""
        return ParallelCorpus(
            [SentencePair(p.target, p.source, p.synthetic) for p in self.pairs],
            self.tgt_lang, self.src_lang)


@dataclass
class MonolingualCorpus:
    sentences: list
    lang: LanguageTag

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


@dataclass
class CorpusStats:
    n_pairs: int
    n_tokens_src: int
    n_tokens_tgt: int
    mean_len_src: float
    mean_len_tgt: float

    def as_tsv(self) -> str:
        rows = [("n_pairs", self.n_pairs),
                ("n_tokens_src", self.n_tokens_src),
                ("n_tokens_tgt", self.n_tokens_tgt),
                ("mean_len_src", f"{self.mean_len_src:.4f}"),
                ("mean_len_tgt", f"{self.mean_len_tgt:.4f}")]
        return "\n".join(f"{k}\t{v}" for k, v in rows)


def _read_lines(path) -> list:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise CorpusError(f"no such corpus file: {path}")
    except UnicodeDecodeError as e:
        raise CorpusError(f"{path} is not valid UTF-8: {e}")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_parallel(src_path, tgt_path, src_lang: LanguageTag,
                  tgt_lang: LanguageTag) -> ParallelCorpus:
    """Zip two line-aligned files into sentence pairs.

    Lines blank on both sides are dropped silently; a line blank on one
    side only rejects the pair and counts it in n_rejected.
    """
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise CorpusError(
            f"line-count mismatch: {src_path} has {len(src_lines)} lines, "
            f"{tgt_path} has {len(tgt_lines)}")
    pairs = []
    rejected = 0
    for s, t in zip(src_lines, tgt_lines):
        s_empty, t_empty = not s.strip(), not t.strip()
        if s_empty and t_empty:
            continue
        if s_empty or t_empty:
            rejected += 1
            continue
        pairs.append(SentencePair(s, t))
    return ParallelCorpus(pairs, src_lang, tgt_lang, n_rejected=rejected)


def load_monolingual(path, lang: LanguageTag) -> MonolingualCorpus:
    lines = [ln for ln in _read_lines(path) if ln.strip()]
    return MonolingualCorpus(lines, lang)


def save_parallel(corpus: ParallelCorpus, src_path, tgt_path):
    Path(src_path).write_text(
        "".join(p.source + "\n" for p in corpus.pairs), encoding="utf-8")
    Path(tgt_path).write_text(
        "".join(p.target + "\n" for p in corpus.pairs), encoding="utf-8")


def save_monolingual(corpus: MonolingualCorpus, path):
    Path(path).write_text(
        "".join(s + "\n" for s in corpus.sentences), encoding="utf-8")


def split(corpus: ParallelCorpus, train_n: int, dev_n: int, test_n: int,
          seed: int, shuffle: bool = True):
    """Deterministic shuffle then contiguous partition into three corpora.

    shuffle=False takes the partition from the corpus in file order.
    """
    total = train_n + dev_n + test_n
    if total > len(corpus):
        raise CorpusError(
            f"split sizes {train_n}+{dev_n}+{test_n} exceed corpus length {len(corpus)}")
    if shuffle:
        order = RngState(fan_seed(seed, "corpus-split")).permutation(len(corpus))
        pairs = [corpus.pairs[i] for i in order]
    else:
        pairs = list(corpus.pairs)

    def part(lo, hi):
        return ParallelCorpus(pairs[lo:hi], corpus.src_lang, corpus.tgt_lang)

    return (part(0, train_n),
            part(train_n, train_n + dev_n),
            part(train_n + dev_n, total))


def stats(corpus: ParallelCorpus) -> CorpusStats:
    n = len(corpus)
    n_src = sum(len(p.source.split()) for p in corpus.pairs)
    n_tgt = sum(len(p.target.split()) for p in corpus.pairs)
    return CorpusStats(
        n_pairs=n,
        n_tokens_src=n_src,
        n_tokens_tgt=n_tgt,
        mean_len_src=n_src / n if n else 0.0,
        mean_len_tgt=n_tgt / n if n else 0.0,
    )
