"""Binary-classification and episode-outcome metrics."""

from __future__ import annotations

import math


def mcc_score(tp: int, fp: int, tn: int, fn: int) -> float:
    """Matthews correlation coefficient; a zero denominator scores 0."""
    if min(tp, fp, tn, fn) < 0:
        raise ValueError("confusion counts must be non-negative")
    denom = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if denom == 0.0:
        return 0.0
    return (tp * tn - fp * fn) / denom


def f1_pos(tp: int, fp: int, fn: int) -> float:
    """F1 of the positive class; degenerate all-zero case scores 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("confusion counts must be non-negative")
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2 * tp / denom


def coverage(outcomes) -> float:
    """Fraction of episodes that ended in a win."""
    outcomes = list(outcomes)
    if not outcomes:
        return 0.0
    return sum(1 for won in outcomes if won) / len(outcomes)


def confusion(pairs) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) from (predicted, actual) boolean pairs."""
    tp = fp = tn = fn = 0
    for pred, actual in pairs:
        if pred and actual:
            tp += 1
        elif pred and not actual:
            fp += 1
        elif not pred and not actual:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn
