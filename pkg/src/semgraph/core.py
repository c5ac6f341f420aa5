"""Semantic graph data model: class catalogs, instance graphs, attributes, goals.

Graphs are bipartite: *component* nodes (detected objects) connect to
*predicate* nodes (states/relations). A frame's description is a multi-graph
of connected atomic graphs, each carrying per-node attribute sets organized
in levels of increasing payload complexity (scalars, feature vectors, opaque
blobs).

All types are immutable values; operations are pure functions.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import InputError

COMPONENT = "c"
PREDICATE = "p"

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered component and predicate class names for one deployment."""

    components: tuple[str, ...]
    predicates: tuple[str, ...]

    def __post_init__(self):
        if not self.components or not self.predicates:
            raise InputError("catalog needs at least one component and one predicate class")
        names = list(self.components) + list(self.predicates)
        if len(set(names)) != len(names):
            raise InputError("class names must be unique within and across kinds")

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def n_predicates(self) -> int:
        return len(self.predicates)

    def class_name(self, kind: str, class_id: int) -> str:
        pool = self.components if kind == COMPONENT else self.predicates
        return pool[class_id]

    def class_id(self, kind: str, name: str) -> int:
        pool = self.components if kind == COMPONENT else self.predicates
        try:
            return pool.index(name)
        except ValueError:
            raise InputError(f"unknown {'component' if kind == COMPONENT else 'predicate'} class {name!r}") from None


@dataclass(frozen=True, order=True)
class NodeRef:
    """One node instance: (kind, class, per-frame-unique instance id)."""

    kind: str
    class_id: int
    instance_id: int

    def __post_init__(self):
        if self.kind not in (COMPONENT, PREDICATE):
            raise InputError(f"node kind must be {COMPONENT!r} or {PREDICATE!r}, got {self.kind!r}")
        if self.instance_id < 0:
            raise InputError("instance_id must be non-negative")


@dataclass(frozen=True)
class AttributeSet:
    """Per-node attribute payloads, ordered by level.

    Level 1 holds a scalar vector (position/velocity style), level 2 a
    unit-norm feature vector, levels 3+ opaque bytes.
    """

    levels: tuple = ()

    def __post_init__(self):
        if len(self.levels) >= 2:
            vec = self.levels[1]
            norm = math.sqrt(sum(float(v) * float(v) for v in vec))
            if abs(norm - 1.0) > UNIT_NORM_TOL:
                raise InputError(f"level-2 feature vector norm {norm:.8f} is not 1 within {UNIT_NORM_TOL}")

    def truncated(self, max_level: int) -> "AttributeSet":
        if len(self.levels) <= max_level:
            return self
        return AttributeSet(self.levels[:max_level])


@dataclass(frozen=True)
class AtomicGraph:
    """One connected bipartite component/predicate graph with attributes.

    Edges are (component, predicate) pairs. Construction does not enforce
    connectivity or bipartiteness; ``validate`` reports violations as data.
    """

    nodes: frozenset[NodeRef] = frozenset()
    edges: frozenset[tuple[NodeRef, NodeRef]] = frozenset()
    attributes: Mapping[NodeRef, AttributeSet] = field(default_factory=dict)

    @staticmethod
    def build(nodes: Iterable[NodeRef],
              edges: Iterable[tuple[NodeRef, NodeRef]] = (),
              attributes: Mapping[NodeRef, AttributeSet] | None = None) -> "AtomicGraph":
        return AtomicGraph(frozenset(nodes), frozenset(tuple(e) for e in edges), dict(attributes or {}))

    @staticmethod
    def empty() -> "AtomicGraph":
        return AtomicGraph()

    def sorted_nodes(self) -> list[NodeRef]:
        return sorted(self.nodes)

    def components(self) -> list[NodeRef]:
        return [n for n in self.sorted_nodes() if n.kind == COMPONENT]

    def predicates(self) -> list[NodeRef]:
        return [n for n in self.sorted_nodes() if n.kind == PREDICATE]

    def degree(self, node: NodeRef) -> int:
        return sum(1 for e in self.edges if node in e)


@dataclass(frozen=True)
class MultiGraph:
    """All atomic graphs detected in one frame."""

    time_index: int
    atoms: tuple[AtomicGraph, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "time_index", int(self.time_index))
        seen: set[NodeRef] = set()
        for atom in self.atoms:
            overlap = seen & atom.nodes
            if overlap:
                raise InputError(f"atoms share nodes: {sorted(overlap)[0]}")
            seen |= atom.nodes


@dataclass(frozen=True)
class Goal:
    """Class whitelists plus the maximum attribute level to retain."""

    component_whitelist: frozenset[str]
    predicate_whitelist: frozenset[str]
    max_attribute_level: int

    @staticmethod
    def universal(catalog: ClassCatalog, max_level: int = 3) -> "Goal":
        return Goal(frozenset(catalog.components), frozenset(catalog.predicates), max_level)

    def check_against(self, catalog: ClassCatalog):
        unknown = (self.component_whitelist - set(catalog.components)) | \
                  (self.predicate_whitelist - set(catalog.predicates))
        if unknown:
            raise InputError(f"goal references unknown classes: {sorted(unknown)}")

    def is_subset_of(self, other: "Goal") -> bool:
        return (self.component_whitelist <= other.component_whitelist
                and self.predicate_whitelist <= other.predicate_whitelist
                and self.max_attribute_level <= other.max_attribute_level)


def validate(graph: AtomicGraph,
             catalog: ClassCatalog | None = None,
             max_levels: int | None = None) -> list[str]:
    """Check AtomicGraph invariants; returns one entry per violation.

    Violations are data, not errors: an empty list means the graph is valid.
    """
    violations = []
    for comp, pred in graph.edges:
        if comp not in graph.nodes or pred not in graph.nodes:
            violations.append(f"edge ({comp}, {pred}) has an endpoint outside the node set")
        if comp.kind == pred.kind:
            violations.append(f"non-bipartite edge ({comp}, {pred}): endpoints share kind {comp.kind!r}")
        elif comp.kind != COMPONENT:
            violations.append(f"edge ({comp}, {pred}) is not ordered (component, predicate)")
    if not _is_connected(graph.nodes, graph.edges):
        violations.append("graph is not connected")
    if catalog is not None:
        for n in graph.sorted_nodes():
            bound = catalog.n_components if n.kind == COMPONENT else catalog.n_predicates
            if n.class_id >= bound:
                violations.append(f"node {n} class_id out of catalog range (< {bound})")
    for node, attrs in graph.attributes.items():
        if node not in graph.nodes:
            violations.append(f"attributes attached to unknown node {node}")
        if max_levels is not None and len(attrs.levels) > max_levels:
            violations.append(f"node {node} carries {len(attrs.levels)} attribute levels, limit {max_levels}")
    return violations


def _is_connected(nodes: frozenset[NodeRef], edges: frozenset[tuple[NodeRef, NodeRef]]) -> bool:
    if len(nodes) <= 1:
        return True
    adj: dict[NodeRef, list[NodeRef]] = {n: [] for n in nodes}
    for a, b in edges:
        if a in adj and b in adj:
            adj[a].append(b)
            adj[b].append(a)
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(nodes)


def split_atoms(nodes: Iterable[NodeRef],
                edges: Iterable[tuple[NodeRef, NodeRef]],
                attributes: Mapping[NodeRef, AttributeSet] | None = None,
                time_index: int = 0) -> MultiGraph:
    """Partition a node/edge soup into its connected components.

    Atoms come out sorted by their smallest node so reruns are reproducible.
    """
    node_set = frozenset(nodes)
    edge_set = frozenset(tuple(e) for e in edges)
    attributes = dict(attributes or {})
    for a, b in edge_set:
        if a not in node_set or b not in node_set:
            raise InputError(f"edge endpoint {a if a not in node_set else b} not among input nodes")

    parent: dict[NodeRef, NodeRef] = {n: n for n in node_set}

    def find(x: NodeRef) -> NodeRef:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edge_set:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    groups: dict[NodeRef, set[NodeRef]] = {}
    for n in node_set:
        groups.setdefault(find(n), set()).add(n)

    atoms = []
    for members in groups.values():
        atom_edges = frozenset(e for e in edge_set if e[0] in members)
        atom_attrs = {n: attributes[n] for n in members if n in attributes}
        atoms.append(AtomicGraph(frozenset(members), atom_edges, atom_attrs))
    atoms.sort(key=lambda a: min(a.nodes))
    return MultiGraph(time_index, tuple(atoms))


def goal_filter(mg: MultiGraph, goal: Goal, catalog: ClassCatalog) -> MultiGraph:
    """Restrict a multi-graph to the goal's classes and attribute levels.

    Nodes of non-whitelisted classes are removed along with their incident
    edges; predicates orphaned by the removal (degree dropped to zero) go
    with them. Surviving nodes are re-split by connectivity, and attribute
    levels above the goal's limit are dropped. The universal goal is the
    identity.
    """
    goal.check_against(catalog)
    comp_ok = {catalog.class_id(COMPONENT, n) for n in goal.component_whitelist}
    pred_ok = {catalog.class_id(PREDICATE, n) for n in goal.predicate_whitelist}

    out_atoms = []
    for atom in mg.atoms:
        kept = set()
        for n in atom.nodes:
            allowed = comp_ok if n.kind == COMPONENT else pred_ok
            if n.class_id in allowed:
                kept.add(n)
        kept_edges = {e for e in atom.edges if e[0] in kept and e[1] in kept}
        # A predicate that lost all its components expresses nothing; drop it.
        # Predicates isolated in the input stay (the universal goal must be a no-op).
        for n in list(kept):
            if n.kind == PREDICATE and atom.degree(n) > 0:
                if not any(n == e[1] for e in kept_edges):
                    kept.discard(n)
        attrs = {n: atom.attributes[n].truncated(goal.max_attribute_level)
                 for n in kept if n in atom.attributes}
        # Removal can only fragment an atom, never join two; re-split locally.
        fragments = split_atoms(kept, kept_edges, attrs).atoms
        out_atoms.extend(fragments)
    return MultiGraph(mg.time_index, tuple(out_atoms))


# ---------------------------------------------------------------------------
# Canonical wire format: one JSON object per frame, nodes sorted by
# (kind, class, id), edges sorted lexicographically over node indices.
# Required for byte-reproducible outputs.

def _node_sort_key(node: NodeRef, catalog: ClassCatalog):
    return (node.kind, catalog.class_name(node.kind, node.class_id), node.instance_id)


def atom_to_obj(atom: AtomicGraph, catalog: ClassCatalog) -> dict:
    nodes = sorted(atom.nodes, key=lambda n: _node_sort_key(n, catalog))
    index = {n: i for i, n in enumerate(nodes)}
    edges = sorted([index[a], index[b]] for a, b in atom.edges)
    obj = {
        "nodes": [{"kind": n.kind, "class": catalog.class_name(n.kind, n.class_id), "id": n.instance_id}
                  for n in nodes],
        "edges": edges,
    }
    attrs = {}
    for n in nodes:
        aset = atom.attributes.get(n)
        if aset is None or not aset.levels:
            continue
        levels = {}
        for lvl, payload in enumerate(aset.levels, start=1):
            if lvl <= 2:
                levels[str(lvl)] = [float(v) for v in payload]
            else:
                levels[str(lvl)] = base64.b64encode(bytes(payload)).decode("ascii")
        attrs[str(index[n])] = levels
    if attrs:
        obj["attrs"] = attrs
    return obj


def atom_from_obj(obj: dict, catalog: ClassCatalog) -> AtomicGraph:
    try:
        nodes = [NodeRef(d["kind"], catalog.class_id(d["kind"], d["class"]), int(d["id"]))
                 for d in obj["nodes"]]
        edges = set()
        for i, j in obj.get("edges", []):
            a, b = nodes[i], nodes[j]
            if a.kind != COMPONENT:
                a, b = b, a
            edges.add((a, b))
        attributes = {}
        for idx, levels in obj.get("attrs", {}).items():
            payloads = []
            for lvl in sorted(levels, key=int):
                raw = levels[lvl]
                if int(lvl) <= 2:
                    payloads.append(tuple(float(v) for v in raw))
                else:
                    payloads.append(base64.b64decode(raw))
            attributes[nodes[int(idx)]] = AttributeSet(tuple(payloads))
    except (KeyError, IndexError, TypeError) as exc:
        raise InputError(f"malformed atom object: {exc}") from exc
    return AtomicGraph(frozenset(nodes), frozenset(edges), attributes)


def frame_to_obj(mg: MultiGraph, catalog: ClassCatalog) -> dict:
    atom_objs = sorted((atom_to_obj(a, catalog) for a in mg.atoms), key=canonical_dumps)
    return {"t": mg.time_index, "atoms": atom_objs}


def frame_from_obj(obj: dict, catalog: ClassCatalog) -> MultiGraph:
    try:
        t = int(obj["t"])
        atoms = tuple(atom_from_obj(a, catalog) for a in obj.get("atoms", []))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed frame object: {exc}") from exc
    return MultiGraph(t, atoms)


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def atom_key(atom: AtomicGraph, catalog: ClassCatalog) -> str:
    """Canonical string identity of an atom (stable across equal graphs)."""
    return canonical_dumps(atom_to_obj(atom, catalog))


def write_jsonl(frames: Iterable[MultiGraph], catalog: ClassCatalog, path):
    with open(path, "w") as fh:
        for mg in frames:
            fh.write(canonical_dumps(frame_to_obj(mg, catalog)) + "\n")


def read_jsonl(path, catalog: ClassCatalog) -> list[MultiGraph]:
    frames = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"invalid JSON line in {path}: {exc}") from exc
            frames.append(frame_from_obj(obj, catalog))
    return frames


def union_graph(mg: MultiGraph) -> AtomicGraph:
    """Merge a frame's atoms into one (possibly disconnected) graph."""
    nodes: set[NodeRef] = set()
    edges: set[tuple[NodeRef, NodeRef]] = set()
    attrs: dict[NodeRef, AttributeSet] = {}
    for atom in mg.atoms:
        nodes |= atom.nodes
        edges |= atom.edges
        attrs.update(atom.attributes)
    return AtomicGraph(frozenset(nodes), frozenset(edges), attrs)
