"""Attribute-level innovation detection via low-rank + sparse decomposition.

Feature vectors of a tracked object across time form a matrix D whose rows
mostly live in a low-dimensional subspace; transient deviations land in the
sparse residual S. Alternating minimization splits D = L + S (rank-limited
truncated SVD step, then element-wise shrinkage step), and the per-row l1
mass of S measures innovation per frame.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .errors import InputError

DEFAULT_FEATURE_DIM = 128
PEAK_SUPPRESSION = 3  # min frame distance between reported peaks


@dataclass(frozen=True)
class FeatureWindow:
    """Per-frame unit-norm feature vectors of one track, stacked by row."""

    track_id: int
    frame_ids: tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != len(self.frame_ids) or m.shape[0] < 1:
            raise InputError("matrix must be n x d with one row per frame id")
        norms = np.linalg.norm(m, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise InputError("feature rows must be unit norm within 1e-6")


@dataclass(frozen=True)
class PcpDecomposition:
    L: np.ndarray
    S: np.ndarray
    t: int
    lam: float
    iterations_used: int
    converged: bool
    objectives: tuple[float, ...] = field(default_factory=tuple, repr=False)


@dataclass(frozen=True)
class InnovationSeries:
    masses: np.ndarray           # per-frame l1 mass of the sparse rows
    detected_peaks: tuple[int, ...]
    threshold: float


def default_lambda(shape: tuple[int, int]) -> float:
    """Standard sparse-term weight 1/sqrt(max(n, d))."""
    return 1.0 / np.sqrt(max(shape))


def shrink(x: np.ndarray, lam: float) -> np.ndarray:
    """Element-wise soft threshold sign(x) * max(|x| - lam, 0)."""
    if lam < 0:
        raise InputError("shrinkage weight must be >= 0")
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def _objective(L: np.ndarray, S: np.ndarray, D: np.ndarray, lam: float) -> float:
    # the quantity the alternating steps actually descend: least-squares
    # misfit plus the sparsity penalty (shrinkage is its exact S-minimizer)
    return 0.5 * np.linalg.norm(L + S - D, "fro") ** 2 + lam * np.abs(S).sum()


def _truncated_svd(m: np.ndarray, t: int) -> np.ndarray:
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    t = min(t, len(s))
    return (u[:, :t] * s[:t]) @ vt[:t]


def rank_select(D: np.ndarray, S: np.ndarray, contribution_threshold: float = 0.05) -> int:
    """Smallest t whose next singular value of D - S falls below the given
    fraction of the total singular mass; capped at min(n, d)."""
    if not 0.0 < contribution_threshold < 1.0:
        raise InputError("contribution threshold must lie in (0, 1)")
    s = np.linalg.svd(np.asarray(D) - np.asarray(S), compute_uv=False)
    total = s.sum()
    if total == 0.0:
        return 0
    for t in range(len(s)):
        if s[t] < contribution_threshold * total:
            return t
    return len(s)


def pcp(D: np.ndarray, lam: float | None = None, rank_policy: int | str = "auto",
        max_iter: int = 200, tol: float = 1e-6,
        contribution_threshold: float = 0.05) -> PcpDecomposition:
    """Split D into a rank-limited L and sparse S by alternating minimization.

    Each iteration projects D - S onto the best rank-t approximation, then
    shrinks the residual D - L element-wise. Starts from S = 0; stops when
    the relative Frobenius change of L drops below tol. ``rank_policy`` is
    either a fixed rank or "auto" (re-selected from the current residual
    every iteration).
    """
    D = np.asarray(D, dtype=float)
    if not np.isfinite(D).all():
        raise InputError("matrix contains non-finite entries")
    if max_iter < 1:
        raise InputError("max_iter must be >= 1")
    if lam is None:
        lam = default_lambda(D.shape)
    if lam <= 0:
        raise InputError("lambda must be positive")
    if isinstance(rank_policy, str) and rank_policy != "auto":
        raise InputError(f"unknown rank policy {rank_policy!r}")

    d_norm = max(1.0, np.linalg.norm(D, "fro"))
    L = np.zeros_like(D)
    S = np.zeros_like(D)
    t = 1
    converged = False
    objectives = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if rank_policy == "auto":
            t = max(1, rank_select(D, S, contribution_threshold))
        else:
            t = int(rank_policy)
        L_next = _truncated_svd(D - S, t)
        S = shrink(D - L_next, lam)
        objectives.append(_objective(L_next, S, D, lam))
        change = np.linalg.norm(L_next - L, "fro") / d_norm
        L = L_next
        if change < tol:
            converged = True
            break
    return PcpDecomposition(L=L, S=S, t=t, lam=lam, iterations_used=iterations,
                            converged=converged, objectives=tuple(objectives))


def _find_peaks(masses: np.ndarray, threshold: float) -> tuple[int, ...]:
    # Pad so spikes at the series edges still count as local maxima.
    if len(masses) == 0:
        return ()
    pad = masses.min() - 1.0
    padded = np.concatenate(([pad], masses, [pad]))
    idx, _ = find_peaks(padded, height=threshold, distance=PEAK_SUPPRESSION)
    return tuple(int(i) - 1 for i in idx)


def innovation(decomp: PcpDecomposition, threshold: float,
               relative: bool = False) -> InnovationSeries:
    """Per-frame l1 mass of the sparse rows plus its thresholded peaks.

    With ``relative`` the threshold is a fraction of the decomposed data's
    mean per-row l1 energy instead of an absolute mass.
    """
    if threshold <= 0:
        raise InputError("threshold must be positive")
    masses = np.abs(decomp.S).sum(axis=1)
    if relative:
        energy = np.abs(decomp.L + decomp.S).sum(axis=1).mean()
        threshold = threshold * energy
    return InnovationSeries(masses, _find_peaks(masses, threshold), threshold)


def windowed_innovation(stream: np.ndarray, buffer_size: int,
                        lam: float | None = None, threshold: float = 1.0,
                        rank_policy: int | str = "auto",
                        relative: bool = False) -> InnovationSeries:
    """Run pcp buffer by buffer over a feature-vector stream.

    The per-row masses of consecutive buffers concatenate into one series
    covering every frame; peaks are detected on the full series. Smaller
    buffers concentrate an innovation into narrower spikes. A ``relative``
    threshold scales by the stream's mean per-row l1 energy.
    """
    stream = np.asarray(stream, dtype=float)
    if buffer_size < 2:
        raise InputError("buffer size must be >= 2")
    if stream.ndim != 2:
        raise InputError("stream must be n x d")
    if threshold <= 0:
        raise InputError("threshold must be positive")
    masses = []
    for start in range(0, len(stream), buffer_size):
        block = stream[start:start + buffer_size]
        decomp = pcp(block, lam=lam, rank_policy=rank_policy)
        masses.append(np.abs(decomp.S).sum(axis=1))
    all_masses = np.concatenate(masses) if masses else np.zeros(0)
    if relative and len(stream):
        threshold = threshold * float(np.abs(stream).sum(axis=1).mean())
    return InnovationSeries(all_masses, _find_peaks(all_masses, threshold), threshold)


def _otsu_split(values: np.ndarray) -> float:
    """Threshold maximizing between-class variance over candidate splits."""
    values = np.sort(values)
    best_thr = values[0] - 1.0  # degenerate: merge nothing
    best_score = -np.inf
    for cut in range(1, len(values)):
        lo, hi = values[:cut], values[cut:]
        w0, w1 = len(lo), len(hi)
        score = w0 * w1 * (lo.mean() - hi.mean()) ** 2
        if score > best_score:
            best_score = score
            best_thr = (lo[-1] + hi[0]) / 2.0
    return float(best_thr)


def reconcile(tracks: dict[int, FeatureWindow],
              threshold: float | None = None,
              lam: float | None = None,
              rank_policy: int | str = "auto") -> list[tuple[int, ...]]:
    """Group track ids whose mean low-rank features are Manhattan-close.

    Each track's window is PCP-decomposed; its signature is the time-mean of
    the low-rank rows. Pairs closer than the threshold link up, and the
    connected groups are returned sorted. With no explicit threshold the
    pairwise-distance histogram is split Otsu-style (falling back to
    near-zero matching when the distances cannot be split).
    """
    if len(tracks) < 2:
        raise InputError("need at least 2 tracks to reconcile")
    usable = {}
    for tid in sorted(tracks):
        fw = tracks[tid]
        if len(fw.frame_ids) < 2:
            warnings.warn(f"track {tid} has fewer than 2 frames; excluded from reconciliation")
            continue
        usable[tid] = fw
    ids = sorted(usable)
    means = {tid: pcp(usable[tid].matrix, lam=lam, rank_policy=rank_policy).L.mean(axis=0)
             for tid in ids}

    pair_dist = {}
    for a_pos, a in enumerate(ids):
        for b in ids[a_pos + 1:]:
            pair_dist[(a, b)] = float(np.abs(means[a] - means[b]).sum())

    if threshold is None:
        dists = np.array(sorted(pair_dist.values()))
        if len(dists) >= 2 and dists[-1] - dists[0] > 1e-12:
            threshold = _otsu_split(dists)
        else:
            threshold = 1e-8  # indistinguishable histogram: merge only exact twins

    parent = {tid: tid for tid in ids}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (a, b), d in pair_dist.items():
        if d < threshold:
            parent[find(a)] = find(b)

    groups: dict[int, list[int]] = {}
    for tid in ids:
        groups.setdefault(find(tid), []).append(tid)
    excluded = [tid for tid in sorted(tracks) if tid not in usable]
    result = [tuple(sorted(g)) for g in groups.values()] + [(tid,) for tid in excluded]
    return sorted(result)
