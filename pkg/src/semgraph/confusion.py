"""Confusion matrices, detection metrics, ROC sweeps, and prevalence.

The matrix counts, at a score threshold tau, how often pattern j was
detected given an actual pattern i. Row sums may fall short of the
per-pattern totals: the shortfall is the miss count, there is no separate
background column.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePatternError, InputError

Sample = tuple[int, np.ndarray]  # (true pattern index, length-K score vector)


@dataclass(frozen=True)
class ConfusionMatrix:
    tau: float
    counts: np.ndarray            # K x K, n[i, j] = actual i detected as j
    pattern_totals: np.ndarray    # length K, N_i >= sum_j n[i, j]
    pattern_labels: tuple[str, ...]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        totals = np.asarray(self.pattern_totals, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "pattern_totals", totals)
        k = len(self.pattern_labels)
        if k < 2:
            raise InputError("need at least 2 patterns")
        if counts.shape != (k, k) or totals.shape != (k,):
            raise InputError(f"shape mismatch: counts {counts.shape}, totals {totals.shape}, K={k}")
        if (counts < 0).any() or (totals < 0).any():
            raise InputError("counts must be non-negative")
        if (counts.sum(axis=1) > totals).any():
            bad = int(np.argmax(counts.sum(axis=1) > totals))
            raise InputError(f"row sum exceeds total for pattern {self.pattern_labels[bad]!r}")

    @property
    def n_patterns(self) -> int:
        return len(self.pattern_labels)

    @property
    def total(self) -> int:
        return int(self.pattern_totals.sum())

    def likelihood(self, i: int, j: int) -> float:
        """Empirical P(detected j | actual i)."""
        if self.pattern_totals[i] == 0:
            raise DegeneratePatternError(self.pattern_labels[i], "no samples")
        return float(self.counts[i, j]) / float(self.pattern_totals[i])

    def to_obj(self) -> dict:
        return {
            "labels": list(self.pattern_labels),
            "tau": self.tau,
            "counts": self.counts.tolist(),
            "totals": self.pattern_totals.tolist(),
        }

    @staticmethod
    def from_obj(obj: dict) -> "ConfusionMatrix":
        try:
            return ConfusionMatrix(float(obj["tau"]), np.array(obj["counts"]),
                                   np.array(obj["totals"]), tuple(obj["labels"]))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed confusion matrix object: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "ConfusionMatrix":
        with open(path) as fh:
            return ConfusionMatrix.from_obj(json.load(fh))


@dataclass(frozen=True)
class ConfusionMetrics:
    tpr: float
    fpr: float
    fnr: float
    tnr: float


@dataclass(frozen=True)
class RocCurve:
    """(fpr, tpr, tau) points sorted by tau descending, endpoints included."""

    points: tuple[tuple[float, float, float], ...] = field(default_factory=tuple)


def metrics(cm: ConfusionMatrix, i: int) -> ConfusionMetrics:
    """The four confusion metrics for pattern i.

    tpr = n_ii / N_i                     fnr = (N_i - n_ii) / N_i
    fpr = sum_{j!=i} n_ji / (N - N_i)    tnr = sum_{j!=i,k!=i} n_jk / (N - N_i)
    """
    if not 0 <= i < cm.n_patterns:
        raise InputError(f"pattern index {i} out of range")
    n_i = int(cm.pattern_totals[i])
    rest = cm.total - n_i
    label = cm.pattern_labels[i]
    if n_i == 0:
        raise DegeneratePatternError(label, "N_i is zero")
    if rest == 0:
        raise DegeneratePatternError(label, "N - N_i is zero")
    diag = int(cm.counts[i, i])
    others = np.delete(np.arange(cm.n_patterns), i)
    tpr = diag / n_i
    # (N_i - n_ii)/N_i rewritten so tpr + fnr == 1 holds bit-exactly
    fnr = 1.0 - tpr
    fpr = float(cm.counts[others, i].sum()) / rest
    tnr = float(cm.counts[np.ix_(others, others)].sum()) / rest
    return ConfusionMetrics(tpr=tpr, fpr=fpr, fnr=fnr, tnr=tnr)


def _check_samples(samples: list[Sample], k: int):
    if not samples:
        raise InputError("empty sample list")
    for truth, scores in samples:
        scores = np.asarray(scores)
        if scores.shape != (k,):
            raise InputError(f"score vector has shape {scores.shape}, expected ({k},)")
        if (scores < 0).any() or (scores > 1).any():
            raise InputError("scores must lie in [0, 1]")
        if not 0 <= truth < k:
            raise InputError(f"true pattern index {truth} out of range")


def estimate_cm(samples: list[Sample], tau: float,
                labels: tuple[str, ...] | None = None) -> ConfusionMatrix:
    """Count argmax-above-threshold detections into a confusion matrix.

    Each sample contributes at most one detection: the pattern with the
    maximal score, provided that score reaches tau. Samples whose maximum
    falls below tau count only toward the per-pattern totals (a miss).
    """
    if not samples:
        raise InputError("empty sample list")
    k = len(np.asarray(samples[0][1]))
    if labels is None:
        labels = tuple(f"pattern{i}" for i in range(k))
    _check_samples(samples, k)
    counts = np.zeros((k, k), dtype=np.int64)
    totals = np.zeros(k, dtype=np.int64)
    for truth, scores in samples:
        scores = np.asarray(scores, dtype=float)
        totals[truth] += 1
        j = int(np.argmax(scores))
        if scores[j] >= tau:
            counts[truth, j] += 1
    return ConfusionMatrix(tau, counts, totals, labels)


def roc_sweep(samples: list[Sample], taus: list[float],
              labels: tuple[str, ...] | None = None) -> dict[int, RocCurve]:
    """Per-pattern ROC from the threshold sweep, endpoints included.

    The tau -> 0 endpoint detects every sample at its argmax; the tau -> 1
    endpoint detects nothing, pinning (fpr, tpr) = (0, 0). Matches
    metrics(estimate_cm(samples, tau)) at every swept tau.
    """
    taus = list(taus)
    if any(not 0 < t < 1 for t in taus):
        raise InputError("sweep thresholds must lie in (0, 1)")
    if sorted(taus) != taus:
        raise InputError("sweep thresholds must be sorted ascending")
    if not samples:
        raise InputError("empty sample list")
    k = len(np.asarray(samples[0][1]))
    _check_samples(samples, k)
    if labels is None:
        labels = tuple(f"pattern{i}" for i in range(k))

    truth = np.array([t for t, _ in samples])
    scores = np.array([np.asarray(s, dtype=float) for _, s in samples])
    best = scores.argmax(axis=1)
    peak = scores[np.arange(len(samples)), best]
    totals = np.bincount(truth, minlength=k).astype(np.int64)

    curves: dict[int, list[tuple[float, float, float]]] = {i: [] for i in range(k)}
    for tau in [1.0 + 1e-12] + list(reversed(taus)) + [0.0]:
        detected = peak >= tau
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (truth[detected], best[detected]), 1)
        cm = ConfusionMatrix(min(tau, 1.0), counts, totals, labels)
        for i in range(k):
            m = metrics(cm, i)
            curves[i].append((m.fpr, m.tpr, cm.tau))
    return {i: RocCurve(tuple(pts)) for i, pts in curves.items()}


def prevalence(samples: list[Sample]) -> np.ndarray:
    """Empirical pattern frequencies N_i / N."""
    if not samples:
        raise InputError("empty sample list")
    k = len(np.asarray(samples[0][1]))
    totals = np.zeros(k, dtype=np.int64)
    for truth, _ in samples:
        if not 0 <= truth < k:
            raise InputError(f"true pattern index {truth} out of range")
        totals[truth] += 1
    return totals / totals.sum()
