import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcsos.model import (ConnectivityError, DegenerateDataError, InconsistentDataError,
                         InstanceError, MixingError, RootError, StructureError, apply_mixing,
                         bipartite_graph, connectivity, instance_to_dict, make_instance,
                         parse_instance, propagate_truth, serialize_instance, spanning_chains)
from mcsos.model import BipartiteGraph
from mcsos.toolkit import gen_graph, gen_instance

from conftest import WORKED_TRUTH


def intro_instance(z0=(2.0, -3.0, 1.5, 4.0, -0.5)):
    """The five elementary entries y1, x2y1, x2y2, x3y1, x3y3 on a 3 x 3 matrix."""
    x2, x3, y1, y2, y3 = z0
    cons = [([(1, 1, 1.0)], y1), ([(2, 1, 1.0)], x2 * y1), ([(2, 2, 1.0)], x2 * y2),
            ([(3, 1, 1.0)], x3 * y1), ([(3, 3, 1.0)], x3 * y3)]
    return make_instance(3, 3, cons, truth=list(z0), label="intro")


def random_chain(rng, v):
    return gen_instance(gen_graph(v, rng), rng)


# -- parsing --------------------------------------------------------------------

def test_parse_worked_example(worked):
    assert worked.K == 5
    assert worked.degrees == [1, 1, 2, 2, 2]
    assert worked.s == 5
    np.testing.assert_array_equal(worked.truth, WORKED_TRUTH)
    assert np.abs(worked.residuals(WORKED_TRUTH)).max() == 0.0


def test_parse_trivial():
    inst = parse_instance('{"n": 1, "m": 1, "constraints": [{"terms": [{"i": 1, "j": 1, "c": 1.0}], "rhs": 4}]}')
    assert inst.K == 1 and inst.degrees == [1]


def test_duplicate_terms_summed(rng):
    doc = {"n": 2, "m": 2, "constraints": [
        {"terms": [{"i": 2, "j": 1, "c": 1.5}, {"i": 2, "j": 1, "c": 2.5}, {"i": 1, "j": 2, "c": 1}], "rhs": 3}]}
    inst = parse_instance(doc)
    assert len(inst.constraints[0].terms) == 2
    single = parse_instance({"n": 2, "m": 2, "constraints": [
        {"terms": [{"i": 2, "j": 1, "c": 4.0}, {"i": 1, "j": 2, "c": 1}], "rhs": 3}]})
    for z in rng.standard_normal((10, 3)):
        assert inst.residuals(z)[0] == pytest.approx(single.residuals(z)[0], rel=1e-14, abs=1e-14)


@pytest.mark.parametrize("doc,path", [
    ({"m": 1, "constraints": []}, "n"),
    ({"n": 0, "m": 1, "constraints": []}, "n"),
    ({"n": 1, "m": 1, "constraints": [{"terms": [{"i": 2, "j": 1, "c": 1}], "rhs": 0}]}, "constraints[0].terms[0].i"),
    ({"n": 1, "m": 1, "constraints": [{"terms": [{"i": 1, "j": 3, "c": 1}], "rhs": 0}]}, "constraints[0].terms[0].j"),
    ({"n": 1, "m": 1, "constraints": [{"terms": [{"i": 1, "j": 1}], "rhs": 0}]}, "constraints[0].terms[0]"),
    ({"n": 1, "m": 1, "constraints": [{"terms": [], "rhs": 0}]}, "constraints[0].terms"),
    ({"n": 1, "m": 1, "constraints": [{"terms": [{"i": 1, "j": 1, "c": 1}], "rhs": "x"}]}, "constraints[0].rhs"),
    ({"n": 1, "m": 1, "constraints": [{"terms": [{"i": 1, "j": 1, "c": 1}], "rhs": 0}], "truth": [0.0]}, "truth[0]"),
    ({"n": 1, "m": 1, "constraints": [{"terms": [{"i": 1, "j": 1, "c": 1}], "rhs": 4}], "truth": [1, 2]}, "truth"),
    ({"n": 1, "m": 1, "constraints": [{"terms": [{"i": 1, "j": 1, "c": 1}], "rhs": 4}], "truth": [5.0]}, "constraints[0]"),
])
def test_parse_errors_carry_path(doc, path):
    with pytest.raises(InstanceError) as ei:
        parse_instance(json.dumps(doc))
    assert ei.value.path == path


def test_parse_rejects_bad_json():
    with pytest.raises(InstanceError):
        parse_instance(b"{not json")
    with pytest.raises(InstanceError):
        parse_instance("[1, 2]")


def test_json_roundtrip_exact(rng):
    for v in (2, 5, 9):
        inst = random_chain(rng, v)
        back = parse_instance(serialize_instance(inst))
        assert instance_to_dict(back) == instance_to_dict(inst)
        np.testing.assert_array_equal(back.truth, inst.truth)


# -- graph and connectivity ----------------------------------------------------------

def test_graph_worked_example(worked):
    g = bipartite_graph(worked)
    assert g.edges == {(1, 1), (1, 2), (2, 1), (2, 3), (3, 2)}
    assert connectivity(g).connected


def test_graph_empty():
    g = BipartiteGraph(2, 2, frozenset())
    assert connectivity(g).connected is False


def test_graph_of_mixed_row():
    inst = apply_mixing(intro_instance(), [[6, -8, 8, 9, -10]], require_full_rank=False)
    g = bipartite_graph(inst)
    assert len(g.edges) == 5


def test_two_stars_disconnected():
    g = BipartiteGraph(2, 4, frozenset({(1, 1), (1, 2), (2, 3), (2, 4)}))
    c = connectivity(g)
    assert not c.connected and len(c.components) == 2


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_generated_graphs_connected(seed, v):
    g = gen_graph(v, np.random.default_rng(seed))
    assert len(g.edges) == v - 1
    assert connectivity(g).connected


# -- chains and propagation ---------------------------------------------------------------

def test_chain_paths_worked_example(worked):
    tree = spanning_chains(worked)
    # z = [x2, x3, y1, y2, y3]; constraints [y1, y2, x2y1, x2y3, x3y2]
    assert tree.path_constraints(2) == [0]
    assert tree.path_constraints(3) == [1]
    assert tree.path_constraints(0) == [0, 2]
    assert tree.path_constraints(1) == [1, 4]
    assert tree.path_constraints(4) == [0, 2, 3]
    for v in range(worked.s):
        ks = tree.path_constraints(v)
        assert worked.constraints[ks[0]].degree == 1
        assert all(worked.constraints[k].degree == 2 for k in ks[1:])


def test_chain_intro_shape():
    inst = intro_instance()
    tree = spanning_chains(inst)
    x2, x3, y1, y2, y3 = range(5)
    assert tree.parent[y1] is None
    assert tree.parent[x2] == y1 and tree.parent[x3] == y1
    assert tree.parent[y2] == x2 and tree.parent[y3] == x3


def test_chain_trivial(tiny):
    tree = spanning_chains(tiny)
    assert tree.path_constraints(0) == [0]
    np.testing.assert_array_equal(propagate_truth(tiny), [4.0])


def test_propagate_worked_example(worked):
    np.testing.assert_allclose(propagate_truth(worked), WORKED_TRUTH, rtol=1e-15)


def test_chain_errors(worked):
    with pytest.raises(ConnectivityError):
        spanning_chains(make_instance(2, 2, [([(1, 1, 1.0)], 1.0), ([(2, 2, 1.0)], 1.0)]))
    with pytest.raises(RootError):
        spanning_chains(make_instance(2, 1, [([(2, 1, 1.0)], 1.0)]))
    mixed = apply_mixing(worked, np.eye(5)[[0, 1, 2, 3]] + np.eye(5)[[1, 2, 3, 4]],
                         require_full_rank=False)
    with pytest.raises(StructureError):
        spanning_chains(mixed)


def test_inconsistent_data():
    # y1 = 2, y2 = 3, x2 y1 = 4, and x2 y2 = 7 clashes with the tree's x2 = 2
    inst = make_instance(2, 2, [([(1, 1, 1.0)], 2.0), ([(1, 2, 1.0)], 3.0),
                                ([(2, 1, 1.0)], 4.0), ([(2, 2, 1.0)], 7.0)])
    with pytest.raises(InconsistentDataError):
        propagate_truth(inst)


def test_degenerate_data():
    with pytest.raises(DegenerateDataError):
        propagate_truth(make_instance(2, 1, [([(1, 1, 1.0)], 0.0), ([(2, 1, 1.0)], 1.0)]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_propagation_recovers_generator_truth(seed, v):
    inst = random_chain(np.random.default_rng(seed), v)
    z = propagate_truth(inst)
    np.testing.assert_allclose(z, inst.truth, rtol=1e-10)


# -- mixing ---------------------------------------------------------------------------

def test_mixing_identity(worked):
    out = apply_mixing(worked, np.eye(5))
    assert instance_to_dict(out) == instance_to_dict(worked)


def test_intro_mixed_rows():
    inst = intro_instance()
    # the second row reproduces 5 x2y1 + 9 x2y2 only with weights on h2, h3
    C = np.array([[6, -8, 8, 9, -10], [0, 5, 9, 0, 0]], dtype=float)
    mixed = apply_mixing(inst, C, require_full_rank=False)
    t0 = {(t.i, t.j): t.c for t in mixed.constraints[0].terms}
    t1 = {(t.i, t.j): t.c for t in mixed.constraints[1].terms}
    assert t0 == {(1, 1): 6, (2, 1): -8, (2, 2): 8, (3, 1): 9, (3, 3): -10}
    assert t1 == {(2, 1): 5, (2, 2): 9}
    assert np.abs(mixed.residuals(inst.truth)).max() <= 1e-12
    with pytest.raises(MixingError):
        apply_mixing(inst, C)


def test_mixing_errors(worked):
    with pytest.raises(MixingError):
        apply_mixing(worked, np.eye(4))
    with pytest.raises(MixingError):
        apply_mixing(worked, np.ones((5, 5)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_orthogonal_mixing_preserves_truth(seed):
    rng = np.random.default_rng(seed)
    inst = random_chain(rng, int(rng.integers(3, 10)))
    Q, _ = np.linalg.qr(rng.standard_normal((inst.K, inst.K)))
    mixed = apply_mixing(inst, Q)
    scale = max(1.0, np.abs(inst.truth).max() ** 2)
    assert np.abs(mixed.residuals(inst.truth)).max() <= 1e-10 * scale
    # h(z) and C h(z) agree up to the conditioning of C at arbitrary points
    z = rng.standard_normal(inst.s)
    np.testing.assert_allclose(mixed.residuals(z), Q @ inst.residuals(z), atol=1e-10 * scale)
    edges = bipartite_graph(mixed).edges
    assert edges <= bipartite_graph(inst).edges
