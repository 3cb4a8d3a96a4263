"""Autoregressive inference: greedy and beam search with length-normalized
scores, plus the full text-to-text translation pipeline.

Hypothesis ordering is deterministic everywhere: score ties break to
higher raw log-probability, then shorter output, then lexicographically
smaller id sequence; token-level argmax ties break to the lowest id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .pipeline import PipelineContext
from .subword import BOS_ID, EOS_ID, PAD_ID

__all__ = ["DecodeConfig", "Hypothesis", "greedy_decode", "greedy_decode_batch",
           "beam_decode", "translate", "translate_lines"]


@dataclass(frozen=True)
class DecodeConfig:
    beam: int = 5
    max_len: int = None          # None: 2 * source length + 10
    length_penalty: float = 1.0  # score divided by length**alpha

    def __post_init__(self):
        if self.beam < 1:
            raise ConfigError(f"beam must be >= 1, got {self.beam}")
        if self.max_len is not None and self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if self.length_penalty < 0.0:
            raise ConfigError("length_penalty must be >= 0")

    def resolved_max_len(self, src_len: int) -> int:
        return self.max_len if self.max_len is not None else 2 * src_len + 10


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple          # generated ids; at most one EOS, at the end
    logprob: float
    alpha: float = 1.0

    @property
    def normalized_score(self) -> float:
        return self.logprob / max(len(self.ids), 1) ** self.alpha

    @property
    def output_ids(self) -> tuple:
        """Generated ids with the terminating EOS stripped."""
        if self.ids and self.ids[-1] == EOS_ID:
            return self.ids[:-1]
        return self.ids

    def sort_key(self):
        return (self.normalized_score, self.logprob, -len(self.ids),
                tuple(-i for i in self.ids))


def _step_logprobs(logits: np.ndarray) -> np.ndarray:
    """Next-token log-probs with PAD and BOS barred from generation."""
    x = logits.copy()
    x[:, PAD_ID] = -np.inf
    x[:, BOS_ID] = -np.inf
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    with np.errstate(invalid="ignore"):
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _as_batch(src_ids) -> np.ndarray:
    arr = np.asarray(src_ids, dtype=np.int64)
    return arr[None, :] if arr.ndim == 1 else arr


def greedy_decode_batch(model, src_batch, src_pad_mask=None,
                        config: DecodeConfig = None) -> list:
    """Greedy decoding of a padded source batch; one Hypothesis per row."""
    config = config or DecodeConfig(beam=1)
    src = _as_batch(src_batch)
    if src_pad_mask is None:
        src_pad_mask = src == PAD_ID
    b = src.shape[0]
    lengths = (~src_pad_mask).sum(axis=1)
    caps = np.array([config.resolved_max_len(int(n)) for n in lengths])
    with ad.no_grad():
        memory = model.encode(src, src_pad_mask)
        prefix = np.full((b, 1), BOS_ID, dtype=np.int64)
        ids = [[] for _ in range(b)]
        logprob = np.zeros(b)
        done = np.zeros(b, dtype=bool)
        for _ in range(int(caps.max())):
            logits = model.decode_step(memory, prefix).data[:, -1, :]
            logp = _step_logprobs(logits)
            choice = logp.argmax(axis=1)  # first max = lowest id
            nxt = np.full(b, PAD_ID, dtype=np.int64)
            for i in range(b):
                if done[i]:
                    continue
                v = int(choice[i])
                ids[i].append(v)
                logprob[i] += logp[i, v]
                nxt[i] = v
                if v == EOS_ID or len(ids[i]) >= caps[i]:
                    done[i] = True
            if done.all():
                break
            prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
    return [Hypothesis(tuple(s), float(lp), config.length_penalty)
            for s, lp in zip(ids, logprob)]


def greedy_decode(model, src_ids, config: DecodeConfig = None) -> Hypothesis:
    """At each step append the argmax token (ties to the lowest id);
    stop at EOS or the length cap."""
    return greedy_decode_batch(model, _as_batch(src_ids), config=config)[0]


def beam_decode(model, src_ids, config: DecodeConfig = None):
    """Beam search over one source sentence.

    Returns (best, n_best): live hypotheses expand by every token, the
    global top-beam by raw log-probability survive, EOS moves a hypothesis
    to the done set, and search stops early once the best finished
    normalized score can no longer be beaten.
    """
    config = config or DecodeConfig()
    alpha = config.length_penalty
    src = _as_batch(src_ids)
    if src.shape[0] != 1:
        raise ConfigError("beam_decode works on a single sentence")
    max_len = config.resolved_max_len(int((src != PAD_ID).sum()))

    with ad.no_grad():
        memory = model.encode(src)
        live = [Hypothesis((), 0.0, alpha)]
        done = []
        while live:
            k = len(live)
            prefix = np.array([(BOS_ID,) + h.ids for h in live], dtype=np.int64)
            mem = memory.tile(k) if k > 1 else memory
            logits = model.decode_step(mem, prefix).data[:, -1, :]
            logp = _step_logprobs(logits)
            vocab = logp.shape[1]
            scores = np.array([h.logprob for h in live])[:, None] + logp
            flat = scores.reshape(-1)
            rows = np.repeat(np.arange(k), vocab)
            toks = np.tile(np.arange(vocab), k)
            order = np.lexsort((toks, rows, -flat))[:config.beam]
            new_live = []
            for pick in order:
                i, v = int(rows[pick]), int(toks[pick])
                hyp = Hypothesis(live[i].ids + (v,), float(flat[pick]), alpha)
                if v == EOS_ID or len(hyp.ids) >= max_len:
                    done.append(hyp)
                else:
                    new_live.append(hyp)
            live = new_live
            if done and live:
                best_done = max(h.normalized_score for h in done)
                best_possible = max(h.logprob for h in live) / max_len ** alpha
                if best_done >= best_possible:
                    break
    done.sort(key=Hypothesis.sort_key, reverse=True)
    return done[0], done


def translate(model, text: str, ctx: PipelineContext,
              config: DecodeConfig = None) -> str:
    """Full pipeline: normalize, tokenize, transliterate, BPE, decode,
    un-BPE, detokenize, detransliterate back to the target script."""
    config = config or DecodeConfig()
    ctx.check_model(model)
    subwords = ctx.source_subwords(text)
    if not subwords:
        return ""
    src_ids = ctx.src_vocab.encode(subwords)
    if config.beam == 1:
        best = greedy_decode(model, src_ids, config)
    else:
        best, _ = beam_decode(model, src_ids, config)
    return ctx.target_text(list(best.output_ids))


def translate_lines(model, lines, ctx: PipelineContext,
                    config: DecodeConfig = None, batch_size: int = 64) -> list:
    """Translate many lines; greedy configs run batched for speed."""
    config = config or DecodeConfig()
    ctx.check_model(model)
    if config.beam != 1:
        return [translate(model, ln, ctx, config) for ln in lines]

    out = [""] * len(lines)
    todo = [(i, ctx.source_ids(ln)) for i, ln in enumerate(lines)
            if ctx.source_subwords(ln)]
    for lo in range(0, len(todo), batch_size):
        chunk = todo[lo:lo + batch_size]
        width = max(len(ids) for _, ids in chunk)
        batch = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        for r, (_, ids) in enumerate(chunk):
            batch[r, :len(ids)] = ids
        hyps = greedy_decode_batch(model, batch, config=config)
        for (i, _), hyp in zip(chunk, hyps):
            out[i] = ctx.target_text(list(hyp.output_ids))
    return out
