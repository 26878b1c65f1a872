"""Ranking quality metrics."""

from __future__ import annotations


def ranking_auc(scores: list[float], labels: list[int]) -> float:
    """Probability a positive outscores a negative; ties count half.

    This is the Mann-Whitney U statistic normalized to [0, 1], computed by
    direct pairwise comparison. Quadratic, which is fine at evaluation sizes.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must have equal length")
    positives = [s for s, label in zip(scores, labels) if label == 1]
    negatives = [s for s, label in zip(scores, labels) if label == 0]
    if not positives or not negatives:
        raise ValueError("AUC needs at least one positive and one negative")
    wins = 0.0
    for p in positives:
        for n in negatives:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(positives) * len(negatives))
