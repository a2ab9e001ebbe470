"""Connectionist temporal classification: loss, gradient, collapse and decoders.

Posteriors are (T, V+1) matrices of per-frame log-probabilities whose last
column is the blank unless a different ``blank`` index is passed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEG_INF = -np.inf
LOG_FLOOR = -745.0  # below this exp() underflows to zero in float64


class InfeasibleTargetError(ValueError):
    pass


def _blank_of(alphabet_or_blank, n_symbols):
    if alphabet_or_blank is None:
        return n_symbols - 1
    if isinstance(alphabet_or_blank, (int, np.integer)):
        return int(alphabet_or_blank)
    return alphabet_or_blank.blank_index


def collapse(path, blank):
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for s in path:
        s = int(s)
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return tuple(out)


def extend_target(target, blank):
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def min_frames(target):
    """Shortest input that can emit ``target``: one frame per label plus a blank between repeats."""
    target = list(target)
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def check_feasible(T, target):
    need = min_frames(target)
    if T < need:
        raise InfeasibleTargetError(
            f"target of length {len(target)} needs at least {need} frames, got {T}")


@dataclass(frozen=True)
class CtcLoss:
    loss: float
    grad: np.ndarray  # d loss / d frame logits, (T, V')
    log_alpha: np.ndarray
    log_beta: np.ndarray


def ctc_loss(logprobs, target, blank=None) -> CtcLoss:
    """Negative log marginal of ``target`` under frame posteriors ``logprobs``.

    ``logprobs`` must be row-normalized (log-softmax of some logits); the
    returned gradient is with respect to those logits.
    """
    lp_full = np.asarray(logprobs, dtype=np.float64)
    T, V = lp_full.shape
    blank = _blank_of(blank, V)
    target = [int(k) for k in target]
    if any(k == blank or not 0 <= k < V for k in target):
        raise ValueError("target contains the blank or an out-of-range symbol")
    check_feasible(T, target)

    lp_full = np.where(lp_full < LOG_FLOOR, NEG_INF, lp_full)
    ext = extend_target(target, blank)
    S = len(ext)
    lp = lp_full[:, ext]  # (T, S)
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp[0, 0]
    if S > 1:
        alpha[0, 1] = lp[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + lp[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = lp[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = lp[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b + lp[t]

    log_p = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])

    with np.errstate(invalid="ignore"):
        occ = alpha + beta - lp - log_p
    occ = np.where(np.isfinite(occ), occ, NEG_INF)
    gamma = np.zeros((T, V))
    np.add.at(gamma, (slice(None), ext), np.exp(occ))
    grad = np.exp(lp_full) - gamma
    return CtcLoss(float(-log_p), grad, alpha, beta)


def greedy_decode(logprobs, alphabet=None):
    """Best path: per-frame argmax (lowest index on ties), then collapse."""
    lp = np.asarray(logprobs)
    blank = _blank_of(alphabet, lp.shape[1])
    return collapse(np.argmax(lp, axis=1), blank)


def beam_decode(logprobs, alphabet=None, beam_width=10):
    """Prefix beam search; returns up to ``beam_width`` (labels, log-score) pairs, best first.

    Scores are log marginals of each prefix summed over the surviving paths,
    so with a beam wider than the prefix space they equal exact marginals.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be at least 1")
    lp = np.asarray(logprobs, dtype=np.float64)
    T, V = lp.shape
    blank = _blank_of(alphabet, V)
    symbols = [k for k in range(V) if k != blank]

    # prefix -> [log p(ending in blank), log p(ending in a label)]
    beams = {(): (0.0, NEG_INF)}
    for t in range(T):
        row = lp[t]
        nxt = {}

        def add(prefix, pb=NEG_INF, pnb=NEG_INF):
            ob, onb = nxt.get(prefix, (NEG_INF, NEG_INF))
            nxt[prefix] = (np.logaddexp(ob, pb), np.logaddexp(onb, pnb))

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            add(prefix, pb=total + row[blank])
            last = prefix[-1] if prefix else None
            for c in symbols:
                if c == last:
                    add(prefix + (c,), pnb=pb + row[c])
                    add(prefix, pnb=pnb + row[c])
                else:
                    add(prefix + (c,), pnb=total + row[c])
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
        # prefixes with no surviving path (e.g. a repeat with no blank between) are dropped
        beams = dict(kv for kv in ranked[:beam_width] if np.logaddexp(*kv[1]) > NEG_INF)
    out = [(p, float(np.logaddexp(*s))) for p, s in beams.items()]
    out.sort(key=lambda ps: (-ps[1], ps[0]))
    return out
