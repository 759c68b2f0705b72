"""Binary classification metrics and the adjusted Rand index."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Hashable, Iterable, Literal, Sequence

Averaging = Literal["binary", "weighted"]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    averaging: str
    # True when some precision/recall denominator was zero and the value was set to 0
    degenerate: bool = False

    def as_row(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def confusion(predictions: Iterable[tuple[bool, bool]]) -> ConfusionCounts:
    """Tally ``(predicted, truth)`` pairs."""
    tally = Counter((bool(p), bool(t)) for p, t in predictions)
    if not tally:
        raise ValueError("cannot build a confusion table from no predictions")
    return ConfusionCounts(
        tp=tally[(True, True)],
        tn=tally[(False, False)],
        fp=tally[(True, False)],
        fn=tally[(False, True)],
    )


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _class_scores(tp: int, fp: int, fn: int) -> tuple[float, float, float, bool]:
    p, dp = _ratio(tp, tp + fp)
    r, dr = _ratio(tp, tp + fn)
    return p, r, f1_score(p, r), dp or dr


def classification_report(counts: ConfusionCounts, averaging: Averaging = "weighted") -> EvalReport:
    """Accuracy, precision, recall and F1 from a confusion table.

    ``binary`` scores the clone class only. ``weighted`` scores both classes
    and averages them by support (actual class size), which makes weighted
    recall equal to accuracy.
    """
    n = counts.total
    if n == 0:
        raise ValueError("empty confusion table")
    accuracy = (counts.tp + counts.tn) / n
    pos = _class_scores(counts.tp, counts.fp, counts.fn)
    if averaging == "binary":
        p, r, f, degenerate = pos
    elif averaging == "weighted":
        neg = _class_scores(counts.tn, counts.fn, counts.fp)
        w_pos = (counts.tp + counts.fn) / n
        w_neg = (counts.tn + counts.fp) / n
        p = w_pos * pos[0] + w_neg * neg[0]
        r = w_pos * pos[1] + w_neg * neg[1]
        f = w_pos * pos[2] + w_neg * neg[2]
        degenerate = (pos[3] and w_pos > 0) or (neg[3] and w_neg > 0)
    else:
        raise ValueError(f"unknown averaging mode {averaging!r}")
    return EvalReport(accuracy, p, r, f, counts, averaging, degenerate)


def _pairs(n: int) -> int:
    return comb(n, 2)


def adjusted_rand_index(truth: Sequence[Hashable], pred: Sequence[Hashable]) -> float:
    """Chance-corrected agreement between two partitions of the same items.

    Evaluated exactly with integer pair counts; only the final ratio is
    converted to float. When both partitions are trivial (the expected and
    maximum index coincide) the result is 1.0 for identical partitions and
    0.0 otherwise.
    """
    if len(truth) != len(pred):
        raise ValueError(f"label sequences differ in length: {len(truth)} vs {len(pred)}")
    n = len(truth)
    if n < 2:
        raise ValueError("need at least two items")
    cells = Counter(zip(truth, pred))
    sum_cells = sum(_pairs(c) for c in cells.values())
    sum_rows = sum(_pairs(c) for c in Counter(truth).values())
    sum_cols = sum(_pairs(c) for c in Counter(pred).values())
    total = _pairs(n)
    # (index - expected) / (max - expected), scaled by 2*C(n,2) to stay in integers
    num = 2 * (sum_cells * total - sum_rows * sum_cols)
    den = (sum_rows + sum_cols) * total - 2 * sum_rows * sum_cols
    if den == 0:
        return 1.0 if num == 0 else 0.0
    return float(Fraction(num, den))
