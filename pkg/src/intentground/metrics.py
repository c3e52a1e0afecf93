"""Sample scoring and benchmark metrics.

Per-sample scores carry the best prediction/ground-truth IoU; benchmark
metrics are Precision@threshold and mean IoU, plus the overall aggregate
across the context and uncommon query types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

DEFAULT_THRESHOLDS = (0.3, 0.5)


@dataclass(frozen=True)
class ScoredSample:
    """One evaluated sample: best IoU against its ground-truth set.

    ``matched_gt_index`` is None when the prediction was unparseable or
    missing, in which case the sample scores 0 but stays in the denominator.
    """

    record_id: str
    best_iou: float
    matched_gt_index: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.best_iou <= 1.0:
            raise ValueError(f"best_iou out of [0, 1]: {self.best_iou}")
        if self.matched_gt_index is None and self.best_iou != 0.0:
            raise ValueError("unmatched sample must score 0")


@dataclass(frozen=True)
class MetricReport:
    """Precision@threshold and mean IoU over one group of samples."""

    n_samples: int
    precision_at: Mapping[float, float] = field(default_factory=dict)
    miou: float = 0.0

    def __post_init__(self) -> None:
        for t, p in self.precision_at.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"precision at {t} out of [0, 1]: {p}")
        ordered = sorted(self.precision_at)
        for lo, hi in zip(ordered, ordered[1:]):
            if self.precision_at[lo] < self.precision_at[hi]:
                raise ValueError(
                    f"precision must be non-increasing in threshold: "
                    f"P@{lo}={self.precision_at[lo]} < P@{hi}={self.precision_at[hi]}"
                )

    @property
    def thresholds(self) -> tuple[float, ...]:
        return tuple(sorted(self.precision_at))


def precision_at(samples: Sequence[ScoredSample], threshold: float, strict: bool = True) -> float:
    """Fraction of samples whose best IoU beats ``threshold``.

    ``strict`` compares with ``>``; pass strict=False for ``>=``.
    """
    if not samples:
        raise ValueError("cannot compute precision over an empty sample list")
    if strict:
        hits = sum(1 for s in samples if s.best_iou > threshold)
    else:
        hits = sum(1 for s in samples if s.best_iou >= threshold)
    return hits / len(samples)


def mean_iou(samples: Sequence[ScoredSample]) -> float:
    """Arithmetic mean of best IoU; unparseable samples contribute 0.

    fsum keeps the mean exactly invariant under sample permutation.
    """
    if not samples:
        raise ValueError("cannot compute mean IoU over an empty sample list")
    return math.fsum(s.best_iou for s in samples) / len(samples)


def build_report(
    samples: Sequence[ScoredSample],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    strict: bool = True,
) -> MetricReport:
    """Compute a MetricReport over one group of samples."""
    return MetricReport(
        n_samples=len(samples),
        precision_at={t: precision_at(samples, t, strict=strict) for t in thresholds},
        miou=mean_iou(samples),
    )


def aggregate_overall(context: MetricReport, uncommon: MetricReport) -> MetricReport:
    """Unweighted mean of the context and uncommon reports, field by field.

    Both reports must have been computed at the same thresholds.
    """
    if context.thresholds != uncommon.thresholds:
        raise ValueError(
            f"threshold sets differ: {context.thresholds} vs {uncommon.thresholds}"
        )
    return MetricReport(
        n_samples=context.n_samples + uncommon.n_samples,
        precision_at={
            t: (context.precision_at[t] + uncommon.precision_at[t]) / 2.0
            for t in context.thresholds
        },
        miou=(context.miou + uncommon.miou) / 2.0,
    )
