"""Statistical graph edit distance and baseline-update smoothing.

Edit costs are negative log probabilities taken from the extractor's
confusion statistics: inserting a node of some class costs -ln of its false
positive rate, deleting costs -ln of its false negative rate, substituting
class i by class j costs -ln of their confusion likelihood. An optional
posterior mode folds class prevalence in through Bayes' rule, so that a
statistically plausible confusion (boat observed where a car lives) comes
out cheap.

The bipartite language has no free edges: every edge hangs off a predicate,
so node edits alone determine the distance and the minimum-cost edit path
reduces to independent optimal assignments over component nodes and
predicate nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .confusion import ConfusionMatrix, metrics
from .core import AtomicGraph, ClassCatalog, NodeRef, atom_key
from .errors import InputError

_SENTINEL = 1e12  # stands in for +inf inside the assignment solver


@dataclass(frozen=True)
class EditCostTable:
    labels: tuple[str, ...]
    insert: np.ndarray      # length K, cost of inserting a node of class i
    delete: np.ndarray      # length K
    substitute: np.ndarray  # K x K, [i, j] = cost of rewriting class i into j
    basis: str = "prior"    # "prior" or "posterior"

    def __post_init__(self):
        ins = np.asarray(self.insert, dtype=float)
        dele = np.asarray(self.delete, dtype=float)
        sub = np.asarray(self.substitute, dtype=float)
        object.__setattr__(self, "insert", ins)
        object.__setattr__(self, "delete", dele)
        object.__setattr__(self, "substitute", sub)
        k = len(self.labels)
        if ins.shape != (k,) or dele.shape != (k,) or sub.shape != (k, k):
            raise InputError("cost table shapes do not match the label count")
        for arr in (ins, dele, sub):
            if np.isnan(arr).any() or (arr < 0).any():
                raise InputError("costs must be >= 0 or +inf")
        if (np.diag(sub) != 0).any():
            raise InputError("substitution diagonal must be 0")

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InputError(f"class {label!r} has no edit costs") from None

    def to_obj(self) -> dict:
        def enc(a):
            return [[_enc_inf(v) for v in row] for row in a] if a.ndim == 2 else [_enc_inf(v) for v in a]
        return {"labels": list(self.labels), "basis": self.basis,
                "insert": enc(self.insert), "delete": enc(self.delete),
                "substitute": enc(self.substitute)}

    @staticmethod
    def from_obj(obj: dict) -> "EditCostTable":
        def dec(a):
            return np.array([[_dec_inf(v) for v in row] for row in a]) if a and isinstance(a[0], list) \
                else np.array([_dec_inf(v) for v in a])
        try:
            return EditCostTable(tuple(obj["labels"]), dec(obj["insert"]), dec(obj["delete"]),
                                 dec(obj["substitute"]), obj.get("basis", "prior"))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed cost table object: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "EditCostTable":
        with open(path) as fh:
            return EditCostTable.from_obj(json.load(fh))


def _enc_inf(v: float):
    return "inf" if np.isinf(v) else float(v)


def _dec_inf(v) -> float:
    return np.inf if v == "inf" else float(v)


@dataclass(frozen=True)
class Edit:
    op: str  # "insert" | "delete" | "substitute"
    before: NodeRef | None
    after: NodeRef | None
    cost: float


@dataclass(frozen=True)
class GedResult:
    distance: float
    path: tuple[Edit, ...] = field(default_factory=tuple)


@dataclass
class BaselineState:
    """Mutable smoothing state for one graph stream."""

    g_base: AtomicGraph
    candidate: AtomicGraph | None = None
    streak: int = 0
    streak_start: int = -1
    required_streak: int = 5


@dataclass(frozen=True)
class InnovationEvent:
    t: int
    distance: float
    before: AtomicGraph
    after: AtomicGraph


def _neg_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return -np.log(p)


def build_costs(cm: ConfusionMatrix, prevalence: Sequence[float] | None = None) -> EditCostTable:
    """Derive node edit costs from a confusion matrix.

    Without prevalence the costs are the raw extractor statistics:
    insert <- -ln FPR, delete <- -ln FNR, substitute(i -> j) <- -ln(n_ij/N_i).
    With prevalence the substitution costs become posterior
    -ln P(actual = i | observed = j) via Bayes' rule, and insertion becomes
    the prior cost -ln prevalence_i of the class existing at all. A zero
    probability yields +inf; the diagonal is pinned at 0 (matching a node to
    itself is not an edit).
    """
    k = cm.n_patterns
    fpr = np.empty(k)
    fnr = np.empty(k)
    for i in range(k):
        m = metrics(cm, i)
        fpr[i] = m.fpr
        fnr[i] = m.fnr
    likelihood = cm.counts / cm.pattern_totals[:, None].astype(float)

    if prevalence is None:
        sub = _neg_log(likelihood)
        ins = _neg_log(fpr)
        basis = "prior"
    else:
        prior = np.asarray(prevalence, dtype=float)
        if prior.shape != (k,):
            raise InputError(f"prevalence must have length {k}")
        if (prior <= 0).any():
            raise InputError("prevalence entries must be positive")
        joint = likelihood * prior[:, None]         # [i, j] = P(obs j | actual i) P(actual i)
        evidence = joint.sum(axis=0)                # [j] = P(obs j)
        with np.errstate(invalid="ignore", divide="ignore"):
            posterior = np.where(evidence > 0, joint / evidence, 0.0)
        sub = _neg_log(posterior)
        ins = _neg_log(prior)
        basis = "posterior"
    np.fill_diagonal(sub, 0.0)
    return EditCostTable(cm.pattern_labels, ins, _neg_log(fnr), sub, basis)


def _node_costs(costs: EditCostTable, catalog: ClassCatalog, node: NodeRef):
    return costs.index(catalog.class_name(node.kind, node.class_id))


def _kind_assignment(left: list[NodeRef], right: list[NodeRef],
                     g1: AtomicGraph, g2: AtomicGraph,
                     costs: EditCostTable, catalog: ClassCatalog,
                     check_arity: bool) -> tuple[float, list[Edit]]:
    n1, n2 = len(left), len(right)
    if n1 + n2 == 0:
        return 0.0, []
    c = np.full((n1 + n2, n1 + n2), np.inf)
    for i, a in enumerate(left):
        ia = _node_costs(costs, catalog, a)
        for j, b in enumerate(right):
            if check_arity and g1.degree(a) != g2.degree(b):
                continue
            c[i, j] = costs.substitute[ia, costs.index(catalog.class_name(b.kind, b.class_id))]
        c[i, n2 + i] = costs.delete[ia]
    for j, b in enumerate(right):
        c[n1 + j, j] = costs.insert[_node_costs(costs, catalog, b)]
    c[n1:, n2:] = 0.0

    rows, cols = linear_sum_assignment(np.minimum(c, _SENTINEL))
    total = 0.0
    edits = []
    for r, col in zip(rows, cols):
        cost = float(c[r, col])
        if r < n1 and col < n2:
            total += cost
            if cost != 0.0 or left[r].class_id != right[col].class_id:
                edits.append(Edit("substitute", left[r], right[col], cost))
        elif r < n1:
            total += cost
            edits.append(Edit("delete", left[r], None, cost))
        elif col < n2:
            total += cost
            edits.append(Edit("insert", None, right[col], cost))
    return total, edits


def ged(g1: AtomicGraph, g2: AtomicGraph, costs: EditCostTable,
        catalog: ClassCatalog) -> GedResult:
    """Exact minimum-cost node edit path from g1 to g2.

    Component and predicate nodes are assigned independently (cross-kind
    substitution is impossible); predicates only match predicates of equal
    arity. An all-infinite optimum is a value, not an error.
    """
    d_c, e_c = _kind_assignment(g1.components(), g2.components(), g1, g2, costs, catalog, False)
    d_p, e_p = _kind_assignment(g1.predicates(), g2.predicates(), g1, g2, costs, catalog, True)
    return GedResult(d_c + d_p, tuple(e_c + e_p))


def smooth(stream: Sequence[AtomicGraph], costs: EditCostTable, catalog: ClassCatalog,
           significance_threshold: float, required_streak: int = 5,
           initial_base: AtomicGraph | None = None,
           times: Sequence[int] | None = None) -> tuple[list[AtomicGraph], list[InnovationEvent]]:
    """Absorb statistically insignificant detections into a baseline graph.

    Frames within the threshold of the baseline emit the baseline (noise
    absorbed). A change persisting for ``required_streak`` consecutive,
    mutually identical frames replaces the baseline; the event is stamped at
    the first frame of the streak and the returned stream switches value
    there, so the output is piecewise constant with changes exactly at the
    reported events.
    """
    if significance_threshold <= 0:
        raise InputError("significance threshold must be positive")
    if required_streak < 1:
        raise InputError("required streak must be >= 1")
    if times is None:
        times = range(len(stream))
    times = list(times)
    if len(times) != len(stream):
        raise InputError("times and stream lengths differ")

    # graph objects repeat across frames; memoize distances by canonical key
    # (and keys by object identity -- every graph stays alive for the call)
    cache: dict[tuple[str, str], float] = {}
    key_memo: dict[int, str] = {}

    def key_of(g: AtomicGraph) -> str:
        k = key_memo.get(id(g))
        if k is None:
            k = atom_key(g, catalog)
            key_memo[id(g)] = k
        return k

    def distance(a: AtomicGraph, b: AtomicGraph) -> float:
        key = (key_of(a), key_of(b))
        if key not in cache:
            cache[key] = ged(a, b, costs, catalog).distance
        return cache[key]

    state = BaselineState(g_base=initial_base if initial_base is not None else AtomicGraph.empty(),
                          required_streak=required_streak)
    filtered: list[AtomicGraph] = []
    events: list[InnovationEvent] = []
    for idx, g in enumerate(stream):
        d = distance(state.g_base, g)
        if d <= significance_threshold:
            state.candidate = None
            state.streak = 0
            filtered.append(state.g_base)
            continue
        if state.candidate is not None and distance(state.candidate, g) == 0.0:
            state.streak += 1
        else:
            state.candidate = g
            state.streak = 1
            state.streak_start = idx
        if state.streak >= state.required_streak:
            new_base = state.candidate
            events.append(InnovationEvent(times[state.streak_start],
                                          distance(state.g_base, new_base),
                                          state.g_base, new_base))
            filtered[state.streak_start:] = [new_base] * (idx - state.streak_start)
            filtered.append(new_base)
            state.g_base = new_base
            state.candidate = None
            state.streak = 0
        else:
            filtered.append(state.g_base)
    return filtered, events
