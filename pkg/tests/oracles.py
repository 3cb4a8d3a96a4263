"""Independent reference implementations used as test oracles.

Nothing here calls back into the code paths under test: gradients come
from central finite differences, BLEU from direct n-gram enumeration,
and search optima from exhaustive enumeration of candidate sequences.
"""

import math
from collections import Counter

import numpy as np


# ---------------------------------------------------------------------------
# gradients: central finite differences


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, one entry at a time.

    f is a closure evaluating the scalar loss from the CURRENT contents
    of x (mutated in place here and restored afterwards).
    """
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def fd_grad_sampled(f, x: np.ndarray, idx: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Finite differences at a subset of flat indices (for big tensors)."""
    flat = x.reshape(-1)
    out = np.zeros(len(idx))
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[j] = (fp - fm) / (2.0 * h)
    return out


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                abs_floor: float = 1e-7) -> float:
    """Relative error with an absolute floor near zero."""
    analytic = np.asarray(analytic, dtype=float).reshape(-1)
    numeric = np.asarray(numeric, dtype=float).reshape(-1)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    rel = diff / scale
    rel[diff < abs_floor] = 0.0
    return float(rel.max()) if rel.size else 0.0


# ---------------------------------------------------------------------------
# BLEU: direct n-gram enumeration


def _ngram_counts(tokens, n):
    counts = Counter()
    for i in range(len(tokens) - n + 1):
        counts[tuple(tokens[i:i + n])] += 1
    return counts


def bleu_oracle(candidate, references, max_n: int = 4) -> float:
    """Sentence BLEU: uniform 1/max_n weights, closest-ref brevity penalty,
    score 0 if any clipped n-gram precision is zero."""
    c = len(candidate)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        total = max(0, c - n + 1)
        if total == 0:
            return 0.0
        clipped = 0
        for gram, cnt in cand_counts.items():
            best = 0
            for ref in references:
                best = max(best, _ngram_counts(ref, n)[gram])
            clipped += min(cnt, best)
        if clipped == 0:
            return 0.0
        log_sum += (1.0 / max_n) * math.log(clipped / total)
    # effective reference length: closest to c, ties to the shorter
    r = min((len(ref) for ref in references),
            key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def clipped_matches_oracle(candidate, references, n: int):
    """(clipped match count, total candidate n-grams) for one order n."""
    cand_counts = _ngram_counts(candidate, n)
    total = max(0, len(candidate) - n + 1)
    clipped = 0
    for gram, cnt in cand_counts.items():
        best = max((_ngram_counts(ref, n)[gram] for ref in references), default=0)
        clipped += min(cnt, best)
    return clipped, total


# ---------------------------------------------------------------------------
# decoding: exhaustive search over all candidate sequences


def exhaustive_best(step_logprobs, vocab_size: int, eos_id: int, max_len: int,
                    alpha: float = 1.0):
    """Enumerate every decodable sequence and return the best hypothesis.

    step_logprobs(prefix_ids) -> np.ndarray[V] of next-token log-probs for
    the generated prefix so far (no BOS). Candidate space: sequences that
    end at their first EOS, plus EOS-free sequences cut at max_len. Ties:
    higher raw logprob, then shorter, then lexicographically smaller ids.
    """
    best = None

    def key(ids, lp):
        return (lp / max(len(ids), 1) ** alpha, lp, -len(ids), [-i for i in ids])

    def walk(prefix, lp):
        nonlocal best
        logp = step_logprobs(prefix)
        for v in range(vocab_size):
            if not math.isfinite(logp[v]):
                continue  # barred token (PAD/BOS)
            ids = prefix + [v]
            total = lp + float(logp[v])
            if v == eos_id or len(ids) == max_len:
                if best is None or key(ids, total) > key(*best):
                    best = (ids, total)
            else:
                walk(ids, total)

    walk([], 0.0)
    return best
