import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semgraph.core import (COMPONENT, PREDICATE, AtomicGraph, AttributeSet, ClassCatalog,
                           Goal, MultiGraph, NodeRef, atom_from_obj, atom_to_obj,
                           canonical_dumps, goal_filter, split_atoms, validate)
from semgraph.errors import InputError

from conftest import comp, graph_of, pred


# -- independent oracles ----------------------------------------------------

def bfs_components(nodes, edges):
    """Connected components by plain BFS; independent of the union-find path."""
    adj = {n: set() for n in nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    remaining = set(nodes)
    groups = []
    while remaining:
        start = remaining.pop()
        queue, group = [start], {start}
        while queue:
            for nb in adj[queue.pop()]:
                if nb not in group:
                    group.add(nb)
                    queue.append(nb)
        remaining -= group
        groups.append(frozenset(group))
    return set(groups)


def whitelist_filter(nodes, catalog, goal):
    """Set-intersection oracle for which nodes survive goal filtering,
    ignoring the orphaned-predicate rule (checked separately)."""
    keep = set()
    for n in nodes:
        names = goal.component_whitelist if n.kind == COMPONENT else goal.predicate_whitelist
        if catalog.class_name(n.kind, n.class_id) in names:
            keep.add(n)
    return keep


# -- catalog & types --------------------------------------------------------

def test_catalog_rejects_duplicates():
    with pytest.raises(InputError):
        ClassCatalog(("car", "car"), ("exists",))
    with pytest.raises(InputError):
        ClassCatalog(("car",), ("car",))
    with pytest.raises(InputError):
        ClassCatalog((), ("exists",))


def test_noderef_ordering_and_kind():
    a = NodeRef(COMPONENT, 0, 1)
    b = NodeRef(PREDICATE, 0, 0)
    assert a < b  # components sort before predicates
    with pytest.raises(InputError):
        NodeRef("x", 0, 0)
    with pytest.raises(InputError):
        NodeRef(COMPONENT, 0, -1)


def test_attribute_set_checks_feature_norm():
    vec = np.ones(4) / 2.0
    AttributeSet(((1.0, 2.0), tuple(vec)))
    with pytest.raises(InputError):
        AttributeSet(((1.0,), (0.5, 0.5)))


def test_multigraph_rejects_shared_nodes(catalog):
    g1 = graph_of(catalog, comps=[("car", 0)])
    with pytest.raises(InputError):
        MultiGraph(0, (g1, g1))


# -- validate ---------------------------------------------------------------

def test_validate_empty_graph_ok():
    assert validate(AtomicGraph.empty()) == []


def test_validate_minimal_bipartite_ok(catalog):
    g = graph_of(catalog, comps=[("car", 0)], preds=[("exists", 0)], edges=[(0, 0)])
    assert validate(g, catalog) == []


def test_validate_flags_non_bipartite_edge(catalog):
    a, b = comp(catalog, "car", 0), comp(catalog, "boat", 0)
    g = AtomicGraph.build([a, b], [(a, b)])
    assert any("non-bipartite edge" in v for v in validate(g))


def test_validate_flags_disconnection_and_dangling(catalog):
    a, b = comp(catalog, "car", 0), comp(catalog, "boat", 1)
    g = AtomicGraph.build([a, b])
    assert any("not connected" in v for v in validate(g))
    loose = AtomicGraph(frozenset([a]), frozenset([(a, pred(catalog, "exists", 0))]))
    assert any("outside the node set" in v for v in validate(loose))


# -- split_atoms ------------------------------------------------------------

def test_split_two_disjoint_edges(catalog):
    a, b = comp(catalog, "car", 0), comp(catalog, "boat", 0)
    p1, p2 = pred(catalog, "exists", 0), pred(catalog, "exists", 1)
    mg = split_atoms([a, b, p1, p2], [(a, p1), (b, p2)])
    assert len(mg.atoms) == 2


def test_split_path_is_one_atom(catalog):
    a, b = comp(catalog, "car", 0), comp(catalog, "boat", 0)
    p1 = pred(catalog, "conjunct", 0)
    mg = split_atoms([a, b, p1], [(a, p1), (b, p1)])
    assert len(mg.atoms) == 1
    assert len(mg.atoms[0].nodes) == 3


def test_split_singletons(catalog):
    nodes = [comp(catalog, "car", i) for i in range(10)]
    mg = split_atoms(nodes, [])
    assert len(mg.atoms) == 10


def test_split_rejects_dangling_edges(catalog):
    a = comp(catalog, "car", 0)
    with pytest.raises(InputError):
        split_atoms([a], [(a, pred(catalog, "exists", 0))])


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_split_matches_bfs_oracle(data):
    catalog = ClassCatalog(("c0", "c1"), ("p0", "p1"))
    n_comp = data.draw(st.integers(0, 6))
    n_pred = data.draw(st.integers(0, 6))
    comps = [NodeRef(COMPONENT, data.draw(st.integers(0, 1)), i) for i in range(n_comp)]
    preds = [NodeRef(PREDICATE, data.draw(st.integers(0, 1)), i) for i in range(n_pred)]
    edges = set()
    if comps and preds:
        for _ in range(data.draw(st.integers(0, 10))):
            edges.add((comps[data.draw(st.integers(0, n_comp - 1))],
                       preds[data.draw(st.integers(0, n_pred - 1))]))
    mg = split_atoms(comps + preds, edges)
    got = {atom.nodes for atom in mg.atoms}
    assert got == bfs_components(comps + preds, edges)
    union = set().union(*got) if got else set()
    assert union == set(comps + preds)


# -- goal_filter ------------------------------------------------------------

def frame(catalog):
    car, boat = comp(catalog, "car", 0), comp(catalog, "boat", 0)
    exists = pred(catalog, "exists", 0)
    atom = AtomicGraph.build([car, boat, exists], [(car, exists), (boat, exists)],
                             {car: AttributeSet(((1.0, 2.0),))})
    return MultiGraph(7, (atom,))


def test_universal_goal_is_identity(catalog):
    mg = frame(catalog)
    assert goal_filter(mg, Goal.universal(catalog), catalog) == mg


def test_goal_filter_removes_classes(catalog):
    mg = frame(catalog)
    goal = Goal(frozenset({"car"}), frozenset({"exists"}), 3)
    out = goal_filter(mg, goal, catalog)
    names = {catalog.class_name(n.kind, n.class_id) for a in out.atoms for n in a.nodes}
    assert names == {"car", "exists"}


def test_goal_filter_drops_orphaned_predicates(catalog):
    car = comp(catalog, "car", 0)
    exists = pred(catalog, "exists", 0)
    mg = MultiGraph(0, (AtomicGraph.build([car, exists], [(car, exists)]),))
    goal = Goal(frozenset({"boat"}), frozenset({"exists"}), 3)
    out = goal_filter(mg, goal, catalog)
    assert out.atoms == ()


def test_goal_filter_keeps_originally_isolated_predicates(catalog):
    lone = pred(catalog, "exists", 0)
    mg = MultiGraph(0, (AtomicGraph.build([lone]),))
    goal = Goal(frozenset({"car"}), frozenset({"exists"}), 3)
    out = goal_filter(mg, goal, catalog)
    assert {n for a in out.atoms for n in a.nodes} == {lone}


def test_goal_filter_truncates_attribute_levels(catalog):
    car = comp(catalog, "car", 0)
    levels = ((1.0,), tuple(np.ones(4) / 2.0), b"blob")
    mg = MultiGraph(0, (AtomicGraph.build([car], attributes={car: AttributeSet(levels)}),))
    out = goal_filter(mg, Goal(frozenset({"car"}), frozenset({"exists"}), 1), catalog)
    assert out.atoms[0].attributes[car].levels == ((1.0,),)


def test_goal_filter_unknown_class_is_input_error(catalog):
    with pytest.raises(InputError):
        goal_filter(frame(catalog), Goal(frozenset({"plane"}), frozenset(), 3), catalog)


@st.composite
def random_frame(draw):
    catalog = ClassCatalog(("c0", "c1", "c2"), ("p0", "p1"))
    n_comp = draw(st.integers(0, 5))
    n_pred = draw(st.integers(0, 4))
    comps = [NodeRef(COMPONENT, draw(st.integers(0, 2)), i) for i in range(n_comp)]
    preds = [NodeRef(PREDICATE, draw(st.integers(0, 1)), i) for i in range(n_pred)]
    edges = set()
    if comps and preds:
        for _ in range(draw(st.integers(0, 8))):
            edges.add((comps[draw(st.integers(0, n_comp - 1))],
                       preds[draw(st.integers(0, n_pred - 1))]))
    mg = split_atoms(comps + preds, edges)
    comp_wl = frozenset(draw(st.sets(st.sampled_from(["c0", "c1", "c2"]))))
    pred_wl = frozenset(draw(st.sets(st.sampled_from(["p0", "p1"]))))
    return catalog, mg, Goal(comp_wl, pred_wl, 3)


@settings(max_examples=80, deadline=None)
@given(random_frame())
def test_goal_filter_nodes_match_whitelist_oracle(case):
    catalog, mg, goal = case
    out = goal_filter(mg, goal, catalog)
    got = {n for a in out.atoms for n in a.nodes}
    all_nodes = {n for a in mg.atoms for n in a.nodes}
    expected = whitelist_filter(all_nodes, catalog, goal)
    # the orphaned-predicate rule may remove more, never add
    assert got <= expected
    dropped = expected - got
    assert all(n.kind == PREDICATE for n in dropped)
    for atom in out.atoms:
        assert validate(atom, catalog) == []


@settings(max_examples=60, deadline=None)
@given(random_frame())
def test_goal_filter_idempotent(case):
    catalog, mg, goal = case
    once = goal_filter(mg, goal, catalog)
    assert goal_filter(once, goal, catalog) == once


@settings(max_examples=60, deadline=None)
@given(random_frame(), st.data())
def test_goal_filter_monotone_in_goal(case, data):
    catalog, mg, goal = case
    sub = Goal(frozenset(data.draw(st.sets(st.sampled_from(sorted(goal.component_whitelist)))))
               if goal.component_whitelist else frozenset(),
               frozenset(data.draw(st.sets(st.sampled_from(sorted(goal.predicate_whitelist)))))
               if goal.predicate_whitelist else frozenset(),
               goal.max_attribute_level)
    big = {n for a in goal_filter(mg, goal, catalog).atoms for n in a.nodes}
    small = {n for a in goal_filter(mg, sub, catalog).atoms for n in a.nodes}
    assert small <= big


# -- wire format ------------------------------------------------------------

def test_canonical_roundtrip_and_ordering(catalog):
    g = graph_of(catalog, comps=[("boat", 1), ("car", 0)], preds=[("exists", 2)],
                 edges=[(0, 0), (1, 0)])
    obj = atom_to_obj(g, catalog)
    kinds = [n["kind"] for n in obj["nodes"]]
    assert kinds == sorted(kinds)  # components first
    names = [n["class"] for n in obj["nodes"] if n["kind"] == "c"]
    assert names == sorted(names)
    assert obj["edges"] == sorted(obj["edges"])
    assert atom_from_obj(obj, catalog) == g
    assert canonical_dumps(obj) == canonical_dumps(atom_to_obj(g, catalog))
