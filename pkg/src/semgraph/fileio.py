"""Delimited file formats consumed and produced by the CLI and pipeline.

Scores:      t,pattern,score
Detections:  t,pattern,score,detected
Features:    t,track_id,v0..v{d-1}
Innovation:  t,track_id,l1,peak
Observations: t,state
ROC:         pattern,tau,fpr,tpr
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import InputError
from .integrator import ScoreStream


def read_scores(path) -> dict[str, ScoreStream]:
    """Score CSV into one stream per pattern, ordered by time."""
    rows: dict[str, list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _need(reader.fieldnames, {"t", "pattern", "score"}, path)
        for rec in reader:
            rows.setdefault(rec["pattern"], []).append((int(rec["t"]), float(rec["score"])))
    streams = {}
    for pattern in sorted(rows):
        pairs = sorted(rows[pattern])
        times = np.array([t for t, _ in pairs])
        scores = np.array([s for _, s in pairs])
        streams[pattern] = ScoreStream(pattern, times, scores)
    if not streams:
        raise InputError(f"no score rows in {path}")
    return streams


def write_scores(streams: dict[str, ScoreStream], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "pattern", "score"])
        for pattern in sorted(streams):
            s = streams[pattern]
            for t, v in zip(s.times, s.scores):
                w.writerow([int(t), pattern, repr(float(v))])


def write_detections(streams: dict[str, ScoreStream], flags: dict[str, np.ndarray], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "pattern", "score", "detected"])
        for pattern in sorted(streams):
            s = streams[pattern]
            for t, v, f in zip(s.times, s.scores, flags[pattern]):
                w.writerow([int(t), pattern, repr(float(v)), int(f)])


def read_features(path) -> dict[int, tuple[list[int], np.ndarray]]:
    """Feature CSV into {track_id: (frame ids, n x d matrix)}."""
    per_track: dict[int, list[tuple[int, list[float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["t", "track_id"]:
            raise InputError(f"feature CSV {path} must start with t,track_id columns")
        dim = len(header) - 2
        if dim < 1:
            raise InputError(f"feature CSV {path} has no vector columns")
        for rec in reader:
            if not rec:
                continue
            per_track.setdefault(int(rec[1]), []).append((int(rec[0]), [float(v) for v in rec[2:]]))
    out = {}
    for tid in sorted(per_track):
        rows = sorted(per_track[tid])
        out[tid] = ([t for t, _ in rows], np.array([v for _, v in rows]))
    return out


def write_features(tracks: dict[int, tuple[list[int], np.ndarray]], path):
    dims = {mat.shape[1] for _, mat in tracks.values()}
    if len(dims) != 1:
        raise InputError("all tracks must share the feature dimension")
    d = dims.pop()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "track_id"] + [f"v{i}" for i in range(d)])
        for tid in sorted(tracks):
            frames, mat = tracks[tid]
            for t, row in zip(frames, mat):
                w.writerow([int(t), int(tid)] + [repr(float(v)) for v in row])


def write_innovation(path, rows):
    """rows: iterable of (t, track_id, l1, peak)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "track_id", "l1", "peak"])
        for t, tid, l1, peak in rows:
            w.writerow([int(t), int(tid), repr(float(l1)), int(peak)])


def read_observations(path, labels: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Observation CSV (t,state) with states as labels or indices."""
    ts, states = [], []
    index = {lab: i for i, lab in enumerate(labels)}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _need(reader.fieldnames, {"t", "state"}, path)
        for rec in reader:
            ts.append(int(rec["t"]))
            raw = rec["state"]
            if raw in index:
                states.append(index[raw])
            else:
                try:
                    states.append(int(raw))
                except ValueError:
                    raise InputError(f"unknown state {raw!r} in {path}") from None
    if not ts:
        raise InputError(f"no observation rows in {path}")
    return np.array(ts), np.array(states)


def write_states(path, times, states, labels: tuple[str, ...]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "state"])
        for t, s in zip(times, states):
            w.writerow([int(t), labels[int(s)]])


def write_roc(path, curves, labels: tuple[str, ...]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pattern", "tau", "fpr", "tpr"])
        for i in sorted(curves):
            for fpr, tpr, tau in curves[i].points:
                w.writerow([labels[i], repr(float(tau)), repr(float(fpr)), repr(float(tpr))])


def _need(fieldnames, required: set[str], path):
    if fieldnames is None or not required <= set(fieldnames):
        raise InputError(f"{path} must have columns {sorted(required)}")
