"""Seeded synthesis of extractor models, timelines, scores, and graph streams.

Everything the processing chain normally gets from a detector running on
video is generated here instead, with known ground truth: Gaussian score
models per pattern, geometric on/off presence timelines, AR(1)-correlated
score traces, and scripted graph scenarios perturbed through a confusion
matrix. Every generator is a pure function of its arguments and seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .confusion import ConfusionMatrix
from .core import COMPONENT, PREDICATE, AtomicGraph, ClassCatalog, NodeRef
from .errors import InputError
from .integrator import ScoreModel, ScoreStream


@dataclass(frozen=True)
class ExtractorModel:
    """Per-pattern score models of a synthetic semantic extractor."""

    pattern_labels: tuple[str, ...]
    score_models: tuple[ScoreModel, ...]

    def __post_init__(self):
        if len(self.pattern_labels) != len(self.score_models):
            raise InputError("one score model per pattern required")

    @property
    def n_patterns(self) -> int:
        return len(self.pattern_labels)


@dataclass(frozen=True)
class Timeline:
    """Per-pattern boolean presence tracks over T frames."""

    presence: np.ndarray  # K x T boolean

    def __post_init__(self):
        object.__setattr__(self, "presence", np.asarray(self.presence, dtype=bool))

    @property
    def n_patterns(self) -> int:
        return self.presence.shape[0]

    @property
    def n_frames(self) -> int:
        return self.presence.shape[1]


NodeSpec = tuple[str, str, int]          # (kind, class name, instance id)
EdgeSpec = tuple[int, int]               # indices into the segment's node list


@dataclass(frozen=True)
class TruthSegment:
    """The true graph holding from start_frame until the next segment."""

    start_frame: int
    nodes: tuple[NodeSpec, ...]
    edges: tuple[EdgeSpec, ...] = ()


@dataclass(frozen=True)
class ScenarioSpec:
    """A scripted graph timeline plus error-injection behavior.

    error_mode "iid" perturbs every frame independently through the
    confusion matrix rows; "isolated" injects single-frame glitches at
    error_rate with a minimum clean gap, so an error never spans two
    consecutive frames.
    """

    catalog: ClassCatalog
    n_frames: int
    segments: tuple[TruthSegment, ...]
    error_rate: float = 0.0
    error_mode: str = "iid"
    min_error_gap: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise InputError("scenario needs at least one frame")
        if not self.segments or self.segments[0].start_frame != 0:
            raise InputError("segments must start at frame 0")
        starts = [s.start_frame for s in self.segments]
        if starts != sorted(starts) or len(set(starts)) != len(starts):
            raise InputError("segment start frames must be strictly increasing")
        if any(not 0 <= s < self.n_frames for s in starts):
            raise InputError("segment start frames must lie in [0, n_frames)")
        if self.error_mode not in ("iid", "isolated"):
            raise InputError(f"unknown error mode {self.error_mode!r}")
        if not 0.0 <= self.error_rate < 1.0:
            raise InputError("error rate must lie in [0, 1)")


def gen_extractor(k: int, separability: float, rho: float, seed: int,
                  labels: tuple[str, ...] | None = None) -> ExtractorModel:
    """Random per-pattern Gaussian score models.

    Larger separability widens the present/absent mean gap relative to the
    score spread. Same seed, same model.
    """
    if k < 2:
        raise InputError("need at least 2 patterns")
    if separability <= 0:
        raise InputError("separability must be positive")
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = tuple(f"pattern{i}" for i in range(k))
    models = []
    for _ in range(k):
        sigma0 = rng.uniform(0.04, 0.10)
        sigma1 = rng.uniform(0.04, 0.10)
        mu0 = rng.uniform(0.10, 0.25)
        gap = separability * max(sigma0, sigma1)
        mu1 = min(mu0 + gap, 0.98)
        if mu1 <= mu0:
            mu1 = mu0 + 1e-3
        models.append(ScoreModel(mu0=mu0, sigma0=sigma0, mu1=mu1, sigma1=sigma1, rho=rho))
    return ExtractorModel(labels, tuple(models))


def gen_timeline(k: int, n_frames: int, dwell_mean_on: float, dwell_mean_off: float,
                 seed: int) -> Timeline:
    """Alternating geometric on/off dwells per pattern, starting off."""
    if n_frames < 1:
        raise InputError("need at least one frame")
    if dwell_mean_on < 1 or dwell_mean_off < 1:
        raise InputError("dwell means must be >= 1")
    rng = np.random.default_rng(seed)
    presence = np.zeros((k, n_frames), dtype=bool)
    for i in range(k):
        t = 0
        on = False
        while t < n_frames:
            mean = dwell_mean_on if on else dwell_mean_off
            dwell = int(rng.geometric(1.0 / mean)) if np.isfinite(mean) else n_frames - t
            presence[i, t:t + dwell] = on
            t += dwell
            on = not on
    return Timeline(presence)


def emit_scores(timeline: Timeline, extractor: ExtractorModel, seed: int) -> list[ScoreStream]:
    """AR(1)-correlated Gaussian scores per pattern, clipped to [0, 1].

    On-frames draw from the present-hypothesis parameters, off-frames from
    the absent ones; the standardized AR process runs through state changes
    so consecutive frames stay correlated.
    """
    if timeline.n_patterns != extractor.n_patterns:
        raise InputError("timeline and extractor pattern counts differ")
    rng = np.random.default_rng(seed)
    t_axis = np.arange(timeline.n_frames)
    streams = []
    for i, model in enumerate(extractor.score_models):
        rho = model.rho
        z = np.empty(timeline.n_frames)
        z[0] = rng.standard_normal()
        innov = rng.standard_normal(timeline.n_frames)
        scale = np.sqrt(1.0 - rho * rho)
        for t in range(1, timeline.n_frames):
            z[t] = rho * z[t - 1] + scale * innov[t]
        on = timeline.presence[i]
        mu = np.where(on, model.mu1, model.mu0)
        sigma = np.where(on, model.sigma1, model.sigma0)
        scores = np.clip(mu + sigma * z, 0.0, 1.0)
        streams.append(ScoreStream(extractor.pattern_labels[i], t_axis, scores))
    return streams


def _segment_graph(segment: TruthSegment, catalog: ClassCatalog) -> AtomicGraph:
    nodes = [NodeRef(kind, catalog.class_id(kind, name), iid) for kind, name, iid in segment.nodes]
    edges = set()
    for i, j in segment.edges:
        a, b = nodes[i], nodes[j]
        if a.kind != COMPONENT:
            a, b = b, a
        edges.add((a, b))
    return AtomicGraph(frozenset(nodes), frozenset(edges))


def truth_stream(scenario: ScenarioSpec) -> list[AtomicGraph]:
    """Per-frame true graphs from the segment script."""
    graphs = [_segment_graph(s, scenario.catalog) for s in scenario.segments]
    out = []
    seg = 0
    for t in range(scenario.n_frames):
        while seg + 1 < len(scenario.segments) and scenario.segments[seg + 1].start_frame <= t:
            seg += 1
        out.append(graphs[seg])
    return out


def _error_frames(scenario: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    if scenario.error_rate == 0.0:
        return np.zeros(scenario.n_frames, dtype=bool)
    flagged = rng.random(scenario.n_frames) < scenario.error_rate
    if scenario.error_mode == "isolated":
        last = -scenario.min_error_gap
        for t in np.flatnonzero(flagged):
            if t - last < scenario.min_error_gap:
                flagged[t] = False
            else:
                last = t
    return flagged


def _perturb_nodes(graph: AtomicGraph, cm: ConfusionMatrix, catalog: ClassCatalog,
                   rng: np.random.Generator) -> AtomicGraph:
    """Resample node classes through the confusion rows; misses drop nodes."""
    nodes = graph.sorted_nodes()
    keep_edges = set(graph.edges)
    mapping: dict[NodeRef, NodeRef | None] = {}
    for node in nodes:
        label = catalog.class_name(node.kind, node.class_id)
        if label not in cm.pattern_labels:
            raise InputError(f"confusion matrix does not cover class {label!r}")
        i = cm.pattern_labels.index(label)
        probs = cm.counts[i] / float(cm.pattern_totals[i])
        miss = 1.0 - probs.sum()
        j = rng.choice(cm.n_patterns + 1, p=np.append(probs, max(miss, 0.0)))
        if j == cm.n_patterns:
            mapping[node] = None  # missed detection
            continue
        new_label = cm.pattern_labels[j]
        pool = catalog.components if node.kind == COMPONENT else catalog.predicates
        if new_label not in pool:
            mapping[node] = None  # confusion crosses kinds; treat as a miss
        else:
            mapping[node] = NodeRef(node.kind, catalog.class_id(node.kind, new_label), node.instance_id)
    new_nodes = {m for m in mapping.values() if m is not None}
    new_edges = {(mapping[a], mapping[b]) for a, b in keep_edges
                 if mapping[a] is not None and mapping[b] is not None}
    return AtomicGraph(frozenset(new_nodes), frozenset(new_edges))


def _glitch(graph: AtomicGraph, catalog: ClassCatalog, rng: np.random.Generator) -> AtomicGraph:
    """One random single-frame error: substitute, drop, or insert a node."""
    nodes = graph.sorted_nodes()
    ops = ["insert"] if not nodes else ["substitute", "delete", "insert"]
    op = ops[rng.integers(len(ops))]
    if op == "insert":
        kind = COMPONENT if rng.random() < 0.5 else PREDICATE
        pool = catalog.components if kind == COMPONENT else catalog.predicates
        used = {n.instance_id for n in nodes if n.kind == kind} or {-1}
        extra = NodeRef(kind, int(rng.integers(len(pool))), max(used) + 1)
        return AtomicGraph(graph.nodes | {extra}, graph.edges, dict(graph.attributes))
    victim = nodes[rng.integers(len(nodes))]
    if op == "delete":
        kept = graph.nodes - {victim}
        edges = {e for e in graph.edges if victim not in e}
        return AtomicGraph(frozenset(kept), frozenset(edges))
    pool = catalog.components if victim.kind == COMPONENT else catalog.predicates
    choices = [c for c in range(len(pool)) if c != victim.class_id]
    if not choices:
        return graph
    new = NodeRef(victim.kind, choices[rng.integers(len(choices))], victim.instance_id)
    mapping = {n: (new if n == victim else n) for n in graph.nodes}
    edges = {(mapping[a], mapping[b]) for a, b in graph.edges}
    return AtomicGraph(frozenset(mapping.values()), frozenset(edges))


def emit_graph_stream(scenario: ScenarioSpec,
                      cm: ConfusionMatrix | None = None) -> tuple[list[AtomicGraph], list[AtomicGraph]]:
    """Scripted truth plus its per-frame noisy observation.

    In "iid" mode each frame's node classes are resampled through the
    confusion rows (diagonal-only counts reproduce the truth). In
    "isolated" mode the truth passes through except at glitch frames, where
    one random node edit is applied for exactly that frame.
    """
    rng = np.random.default_rng(scenario.seed)
    truth = truth_stream(scenario)
    errors = _error_frames(scenario, rng)
    observed = []
    for t, g in enumerate(truth):
        if scenario.error_mode == "isolated":
            observed.append(_glitch(g, scenario.catalog, rng) if errors[t] else g)
        else:
            if cm is None:
                raise InputError("iid mode needs a confusion matrix")
            observed.append(_perturb_nodes(g, cm, scenario.catalog, rng))
    return truth, observed
