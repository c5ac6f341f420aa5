import numpy as np
import pytest

from semgraph.core import COMPONENT, PREDICATE, AtomicGraph, ClassCatalog, NodeRef


@pytest.fixture
def catalog():
    return ClassCatalog(components=("car", "boat", "person"),
                        predicates=("exists", "moving", "conjunct"))


def comp(catalog, name, iid=0):
    return NodeRef(COMPONENT, catalog.components.index(name), iid)


def pred(catalog, name, iid=0):
    return NodeRef(PREDICATE, catalog.predicates.index(name), iid)


def graph_of(catalog, comps=(), preds=(), edges=()):
    """Build an AtomicGraph from (name, iid) specs and index pairs."""
    cnodes = [comp(catalog, n, i) for n, i in comps]
    pnodes = [pred(catalog, n, i) for n, i in preds]
    return AtomicGraph.build(cnodes + pnodes,
                             [(cnodes[a], pnodes[b]) for a, b in edges])


def unit_rows(rng, n, d, base=None, noise=0.0):
    """n unit-norm feature rows around an optional base direction."""
    if base is None:
        rows = rng.standard_normal((n, d))
    else:
        rows = np.tile(base, (n, 1)) + noise * rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)
