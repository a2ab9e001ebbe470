"""Word- and sentence-level evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def class_ranks(probs, truth):
    """0-based rank of ``truth``; a lower class index wins ties."""
    probs = np.asarray(probs)
    p = probs[truth]
    return int(np.sum(probs > p) + np.sum(probs[:truth] == p))


def topk_accuracy(posteriors, truths, k):
    """Fraction of samples whose true class is among the ``k`` most probable."""
    if len(posteriors) != len(truths):
        raise ValueError("posteriors and truths differ in length")
    if not posteriors:
        raise ValueError("no samples")
    P = [np.asarray(getattr(p, "probs", p)) for p in posteriors]
    C = len(P[0])
    if not 1 <= k <= C:
        raise ValueError(f"k must be in [1, {C}]")
    hits = sum(class_ranks(p, t) < k for p, t in zip(P, truths))
    return hits / len(P)


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows: truth, columns: prediction
    labels: tuple = ()

    def recall(self):
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / rows, np.nan)

    def precision(self):
        cols = self.counts.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(cols > 0, np.diag(self.counts) / cols, np.nan)


def confusion(predictions, truths, C, labels=()):
    counts = np.zeros((C, C), dtype=np.int64)
    for p, t in zip(predictions, truths):
        if not (0 <= p < C and 0 <= t < C):
            raise IndexError(f"class index out of range: truth {t}, prediction {p}")
        counts[t, p] += 1
    return ConfusionMatrix(counts, tuple(labels))


@dataclass(frozen=True)
class WerReport:
    substitutions: int
    insertions: int
    deletions: int
    reference_length: int

    @property
    def edits(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self):
        return self.edits / self.reference_length


def edit_counts(prediction, reference):
    """Word-level Levenshtein alignment returning ``(S, I, D)``.

    Among minimum-cost alignments the one with the fewest deletions is
    chosen; since ``I - D`` is fixed by the lengths this also maximizes
    substitutions, so the triple is unique.
    """
    hyp, ref = list(prediction), list(reference)
    n, m = len(ref), len(hyp)
    # cost[i][j] = (edits, deletions, subs, ins) aligning ref[:i] with hyp[:j]
    cost = [[None] * (m + 1) for _ in range(n + 1)]
    cost[0][0] = (0, 0, 0, 0)
    for i in range(1, n + 1):
        cost[i][0] = (i, i, 0, 0)
    for j in range(1, m + 1):
        cost[0][j] = (j, 0, 0, j)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            e, d, s, ins = cost[i - 1][j - 1]
            diag = (e, d, s, ins) if ref[i - 1] == hyp[j - 1] else (e + 1, d, s + 1, ins)
            e, d, s, ins = cost[i - 1][j]
            up = (e + 1, d + 1, s, ins)
            e, d, s, ins = cost[i][j - 1]
            left = (e + 1, d, s, ins + 1)
            cost[i][j] = min(diag, up, left, key=lambda c: (c[0], c[1]))
    e, d, s, ins = cost[n][m]
    return s, ins, d


def wer(prediction, reference) -> WerReport:
    if len(reference) == 0:
        raise ValueError("reference must not be empty")
    s, i, d = edit_counts(prediction, reference)
    return WerReport(s, i, d, len(reference))


def corpus_wer(predictions, references):
    """Pooled WER: total edits over total reference words, plus the summed counts."""
    reps = [wer(p, r) for p, r in zip(predictions, references)]
    S = sum(r.substitutions for r in reps)
    I = sum(r.insertions for r in reps)
    D = sum(r.deletions for r in reps)
    N = sum(r.reference_length for r in reps)
    return WerReport(S, I, D, N)
