"""Accuracy and calibration metrics over prediction records.

Every function accepts any sequence of objects exposing ``confidence``
(float in (0, 1]), ``correct`` (bool) and ``sample_id`` (int) attributes.
Metrics depend on nothing else, so they are invariant to record permutation
and, for AURC, to any strictly monotone transform of the confidences.

Binning rules (fixed, deterministic):

* equal-width bins: bin k covers [k/B, (k+1)/B); a confidence exactly on an
  edge goes to the higher bin, and 1.0 goes to the last bin;
* equal-mass bins: records sorted by confidence (stable) are split into B
  contiguous groups whose sizes differ by at most one, the first ``len % B``
  groups taking the extra record.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericDomainError

DEFAULT_NUM_BINS = 20


@dataclass(frozen=True)
class BinStat:
    """Aggregates for one confidence bin; means are None when empty."""

    lower: float
    upper: float
    count: int
    mean_confidence: Optional[float]
    mean_accuracy: Optional[float]

    @property
    def gap(self) -> Optional[float]:
        if self.count == 0:
            return None
        return abs(self.mean_accuracy - self.mean_confidence)


@dataclass(frozen=True)
class GeometryDiagnostics:
    """Hypersphere geometry summary attached to a calibration report.

    ``mean_logit_value`` is defined as ``tau * mean_cross_cosine`` (the
    logit mean is the scaled mean cosine by linearity).
    """

    atfd: float
    mean_logit_range: float
    mean_logit_value: float
    modality_gap_l2: float
    mean_cross_cosine: float


@dataclass
class CalibrationReport:
    """The five evaluation metrics plus reliability data for one run."""

    accuracy: float
    ece: float
    aece: float
    mce: float
    aurc: float
    num_bins: int
    bin_stats_equal_width: tuple = ()
    bin_stats_equal_mass: tuple = ()
    diagnostics: Optional[GeometryDiagnostics] = None


def _extract(records):
    if len(records) == 0:
        raise NumericDomainError("metrics require at least one record")
    conf = np.array([r.confidence for r in records], dtype=np.float64)
    correct = np.array([bool(r.correct) for r in records], dtype=np.float64)
    return conf, correct


def _width_bin_index(conf: np.ndarray, num_bins: int) -> np.ndarray:
    edges = np.arange(num_bins + 1, dtype=np.float64) / num_bins
    idx = np.searchsorted(edges, conf, side="right") - 1
    return np.minimum(idx, num_bins - 1)


def accuracy(records) -> float:
    """Fraction of correct predictions."""
    _, correct = _extract(records)
    return float(np.mean(correct))


def ece(records, num_bins: int = DEFAULT_NUM_BINS) -> float:
    """Expected calibration error over equal-width confidence bins."""
    conf, correct = _extract(records)
    idx = _width_bin_index(conf, num_bins)
    total = len(conf)
    value = 0.0
    for b in range(num_bins):
        mask = idx == b
        n = int(np.sum(mask))
        if n == 0:
            continue
        gap = abs(np.mean(correct[mask]) - np.mean(conf[mask]))
        value += (n / total) * gap
    return float(value)


def mce(records, num_bins: int = DEFAULT_NUM_BINS) -> float:
    """Worst-bin calibration gap over equal-width bins."""
    conf, correct = _extract(records)
    idx = _width_bin_index(conf, num_bins)
    worst = 0.0
    for b in range(num_bins):
        mask = idx == b
        if not np.any(mask):
            continue
        worst = max(worst, abs(float(np.mean(correct[mask]) - np.mean(conf[mask]))))
    return worst


def _equal_mass_groups(order: np.ndarray, num_bins: int):
    n = len(order)
    base, extra = divmod(n, num_bins)
    start = 0
    for b in range(num_bins):
        size = base + (1 if b < extra else 0)
        yield order[start:start + size]
        start += size


def aece(records, num_bins: int = DEFAULT_NUM_BINS) -> float:
    """Adaptive calibration error over equal-mass (sorted-confidence) bins."""
    conf, correct = _extract(records)
    order = np.argsort(conf, kind="stable")
    total = len(conf)
    value = 0.0
    for group in _equal_mass_groups(order, num_bins):
        if len(group) == 0:
            continue
        gap = abs(np.mean(correct[group]) - np.mean(conf[group]))
        value += (len(group) / total) * gap
    return float(value)


def aurc(records) -> float:
    """Area under the risk-coverage curve.

    Records are ranked by confidence descending (ties by sample_id); the
    risk at coverage k is the error rate among the k most confident
    predictions, and AURC is the plain mean of the risks over k = 1..S.
    """
    if len(records) == 0:
        raise NumericDomainError("metrics require at least one record")
    ranked = sorted(records, key=lambda r: (-r.confidence, r.sample_id))
    errors = np.array([0.0 if r.correct else 1.0 for r in ranked])
    risks = np.cumsum(errors) / np.arange(1, len(ranked) + 1)
    return float(np.mean(risks))


def reliability_data(records, num_bins: int = DEFAULT_NUM_BINS):
    """Per-bin statistics for reliability diagrams (equal-width bins)."""
    conf, correct = _extract(records)
    idx = _width_bin_index(conf, num_bins)
    stats = []
    for b in range(num_bins):
        mask = idx == b
        n = int(np.sum(mask))
        stats.append(BinStat(
            lower=b / num_bins,
            upper=(b + 1) / num_bins,
            count=n,
            mean_confidence=float(np.mean(conf[mask])) if n else None,
            mean_accuracy=float(np.mean(correct[mask])) if n else None,
        ))
    return tuple(stats)


def equal_mass_bin_stats(records, num_bins: int = DEFAULT_NUM_BINS):
    """Per-bin statistics for the adaptive binning; empty groups are dropped."""
    conf, correct = _extract(records)
    order = np.argsort(conf, kind="stable")
    stats = []
    for group in _equal_mass_groups(order, num_bins):
        if len(group) == 0:
            continue
        members = conf[group]
        stats.append(BinStat(
            lower=float(np.min(members)),
            upper=float(np.max(members)),
            count=int(len(group)),
            mean_confidence=float(np.mean(members)),
            mean_accuracy=float(np.mean(correct[group])),
        ))
    return tuple(stats)


def compute_report(records, num_bins: int = DEFAULT_NUM_BINS,
                   diagnostics: Optional[GeometryDiagnostics] = None) -> CalibrationReport:
    """Evaluate all five metrics plus reliability data in one pass."""
    return CalibrationReport(
        accuracy=accuracy(records),
        ece=ece(records, num_bins),
        aece=aece(records, num_bins),
        mce=mce(records, num_bins),
        aurc=aurc(records),
        num_bins=num_bins,
        bin_stats_equal_width=reliability_data(records, num_bins),
        bin_stats_equal_mass=equal_mass_bin_stats(records, num_bins),
        diagnostics=diagnostics,
    )
