"""Text <-> id plumbing shared by decoding, back-translation, and the
experiment runner: normalize, tokenize, transliterate to Devanagari,
BPE, and vocabulary encoding, plus the inverse chain.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import textnorm
from .corpus import LanguageTag, ParallelCorpus
from .errors import FingerprintError
from .subword import (BpeModel, Vocabulary, apply_bpe, build_vocab, learn_bpe,
                      undo_bpe)

__all__ = ["PipelineContext", "build_context", "encode_corpus"]


@dataclass
class PipelineContext:
    """Everything needed to move text through a trained system's pipeline."""
    src_lang: LanguageTag
    tgt_lang: LanguageTag
    bpe_src: BpeModel
    bpe_tgt: BpeModel
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    transliterate: bool = True
    keep_joiners: bool = False

    @property
    def src_script(self):
        return textnorm.script_for_lang(self.src_lang.code)

    @property
    def tgt_script(self):
        return textnorm.script_for_lang(self.tgt_lang.code)

    def swapped(self) -> "PipelineContext":
        return PipelineContext(self.tgt_lang, self.src_lang,
                               self.bpe_tgt, self.bpe_src,
                               self.tgt_vocab, self.src_vocab,
                               self.transliterate, self.keep_joiners)

    # -- text -> subwords -> ids

    def _prep_tokens(self, text: str, script) -> list:
        norm = textnorm.normalize(text, keep_joiners=self.keep_joiners)
        tokens = list(textnorm.tokenize(norm).tokens)
        if self.transliterate:
            tokens = [textnorm.transliterate(t, script, textnorm.DEVANAGARI)
                      for t in tokens]
        return tokens

    def source_subwords(self, text: str) -> list:
        return apply_bpe(self.bpe_src, self._prep_tokens(text, self.src_script))

    def target_subwords(self, text: str) -> list:
        return apply_bpe(self.bpe_tgt, self._prep_tokens(text, self.tgt_script))

    def source_ids(self, text: str) -> list:
        return self.src_vocab.encode(self.source_subwords(text))

    def target_ids(self, text: str) -> list:
        return self.tgt_vocab.encode(self.target_subwords(text))

    # -- ids -> text

    def target_text(self, ids) -> str:
        tokens = undo_bpe(self.tgt_vocab.decode(ids))
        text = textnorm.detokenize(tokens)
        if self.transliterate:
            text = textnorm.detransliterate(text, self.tgt_script)
        return text

    def check_model(self, model):
        got = model.vocab_fingerprints()
        want = (self.src_vocab.fingerprint(), self.tgt_vocab.fingerprint())
        if got != want:
            raise FingerprintError(
                f"model vocab fingerprints {got} do not match pipeline {want}")


def build_context(corpus: ParallelCorpus, num_merges: int = 8000,
                  min_count: int = 1, max_vocab: int = None,
                  joint: bool = False, transliterate: bool = True,
                  keep_joiners: bool = False) -> PipelineContext:
    """Learn BPE models and vocabularies from a parallel corpus.

    Per-side models by default; joint=True learns one shared model and
    vocabulary over both sides (plausible once scripts are pooled by
    transliteration).
    """
    src_script = textnorm.script_for_lang(corpus.src_lang.code)
    tgt_script = textnorm.script_for_lang(corpus.tgt_lang.code)

    def prep(text, script):
        norm = textnorm.normalize(text, keep_joiners=keep_joiners)
        tokens = list(textnorm.tokenize(norm).tokens)
        if transliterate:
            tokens = [textnorm.transliterate(t, script, textnorm.DEVANAGARI)
                      for t in tokens]
        return tokens

    src_tok = [prep(p.source, src_script) for p in corpus.pairs]
    tgt_tok = [prep(p.target, tgt_script) for p in corpus.pairs]

    if joint:
        model = learn_bpe(src_tok + tgt_tok, num_merges)
        applied = [apply_bpe(model, s) for s in src_tok + tgt_tok]
        vocab = build_vocab(applied, min_count=min_count, max_size=max_vocab)
        bpe_src = bpe_tgt = model
        src_vocab = tgt_vocab = vocab
    else:
        bpe_src = learn_bpe(src_tok, num_merges)
        bpe_tgt = learn_bpe(tgt_tok, num_merges)
        src_vocab = build_vocab([apply_bpe(bpe_src, s) for s in src_tok],
                                min_count=min_count, max_size=max_vocab)
        tgt_vocab = build_vocab([apply_bpe(bpe_tgt, s) for s in tgt_tok],
                                min_count=min_count, max_size=max_vocab)
    return PipelineContext(corpus.src_lang, corpus.tgt_lang, bpe_src, bpe_tgt,
                           src_vocab, tgt_vocab, transliterate, keep_joiners)


def encode_corpus(ctx: PipelineContext, corpus: ParallelCorpus) -> list:
    """Binarize: [(src id list, tgt id list)] with EOS appended to each side."""
    return [(ctx.source_ids(p.source), ctx.target_ids(p.target))
            for p in corpus.pairs]
