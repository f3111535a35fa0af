import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fd import numeric_grad, rel_err
from oracles import brute_force_adjacency, random_tree_edges
from hhar import diffcore as dc
from hhar.hierarchy import (
    LabelHierarchy,
    adaptive_adjacency,
    build_predefined_adjacency,
    bundled,
    expand_label_set,
    is_valid_path,
    normalize_adjacency,
)


def test_four_node_adjacency_values(four_node):
    A = build_predefined_adjacency(four_node)
    i = four_node.index
    assert A[i("sitting"), i("standing")] == 1.0
    assert A[i("sitting"), i("walking")] == 0.5
    assert A[i("walking"), i("sitting")] == 1.0
    assert np.all(np.diag(A) == 0)


def test_single_node_adjacency():
    h = LabelHierarchy.from_edges([("r", "only")])
    np.testing.assert_array_equal(build_predefined_adjacency(h), [[0.0]])


def test_node_order_is_first_appearance(four_node):
    assert four_node.nodes == ("still", "walking", "sitting", "standing")
    assert four_node.root == "r"
    assert four_node.ancestors("sitting") == ("still", "r")


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_adjacency_matches_brute_force(n, seed):
    edges = random_tree_edges(np.random.default_rng(seed), n)
    h = LabelHierarchy.from_edges(edges)
    A = build_predefined_adjacency(h)
    assert np.array_equal(A, brute_force_adjacency(edges))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_adjacency_at_most_one_with_subset_equality(n, seed):
    h = LabelHierarchy.from_edges(random_tree_edges(np.random.default_rng(seed), n))
    A = build_predefined_adjacency(h)
    assert (A <= 1).all() and (A >= 0).all()
    for i, vi in enumerate(h.nodes):
        for j, vj in enumerate(h.nodes):
            if i != j:
                subset = set(h.ancestors(vi)) <= set(h.ancestors(vj))
                assert (A[i, j] == 1.0) == subset


def test_normalize_examples():
    np.testing.assert_allclose(normalize_adjacency([[0, 1], [1, 0]]), [[1, 1], [1, 1]])
    np.testing.assert_allclose(normalize_adjacency([[0]]), [[1]])
    np.testing.assert_allclose(normalize_adjacency([[0, 2], [2, 0]]), [[1, 1], [1, 1]], rtol=1e-12)


def test_normalize_zero_degree_row_is_safe():
    out = normalize_adjacency([[0, 0], [1, 0]])
    assert np.isfinite(out).all()
    assert (np.diag(out) >= 1).all()


def test_normalize_rejects_negative():
    with pytest.raises(ValueError, match="negative"):
        normalize_adjacency([[0, -1], [1, 0]])


def test_adaptive_uniform_from_zero_embeddings():
    z = dc.Tensor(np.zeros((3, 4)))
    np.testing.assert_allclose(adaptive_adjacency(z, z).values, np.full((3, 3), 1 / 3))


def test_adaptive_hand_softmax():
    # E1 E2^T = I
    E = dc.Tensor(np.eye(2))
    out = adaptive_adjacency(E, E).values
    np.testing.assert_allclose(out, [[0.7311, 0.2689], [0.2689, 0.7311]], atol=1e-4)


def test_adaptive_gradient_matches_finite_differences(rng):
    E1, E2 = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    readout = rng.normal(size=(4, 4))
    t1 = dc.Tensor(E1, requires_grad=True)
    t2 = dc.Tensor(E2, requires_grad=True)
    dc.sum(adaptive_adjacency(t1, t2) * readout).backward()

    def f():
        return float((adaptive_adjacency(dc.Tensor(E1), dc.Tensor(E2)).values * readout).sum())

    assert rel_err(t1.grad, numeric_grad(f, E1)) < 1e-4
    assert rel_err(t2.grad, numeric_grad(f, E2)) < 1e-4


def test_adaptive_shape_mismatch():
    with pytest.raises(dc.ShapeError):
        adaptive_adjacency(dc.Tensor(np.zeros((3, 2))), dc.Tensor(np.zeros((3, 4))))


def test_expand_label_set(four_node):
    y = dict(zip(four_node.nodes, expand_label_set(four_node, "sitting")))
    assert y == {"still": 1, "walking": 0, "sitting": 1, "standing": 0}
    assert expand_label_set(four_node, "walking").tolist() == [0, 1, 0, 0]
    assert expand_label_set(four_node, "standing").sum() == 2


def test_expand_unknown_node(four_node):
    with pytest.raises(ValueError, match="jumping"):
        expand_label_set(four_node, "jumping")


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_popcount_equals_depth(n, seed):
    h = LabelHierarchy.from_edges(random_tree_edges(np.random.default_rng(seed), n))
    for v in h.nodes:
        y = expand_label_set(h, v)
        # depth counts the virtual root, the label set does not
        assert y.sum() == h.depth(v)
        assert is_valid_path(h, y)


def test_invalid_paths(four_node):
    assert not is_valid_path(four_node, [0, 0, 0, 0])
    assert not is_valid_path(four_node, [0, 0, 1, 0])  # sitting without still
    assert not is_valid_path(four_node, [1, 1, 0, 0])


def test_load_and_dump_round_trip(tmp_path, four_node):
    four_node.dump(tmp_path / "h.tsv")
    again = LabelHierarchy.load(tmp_path / "h.tsv")
    assert again.nodes == four_node.nodes and again.edges() == four_node.edges()


@pytest.mark.parametrize("edges, msg", [
    ([("r", "a"), ("s", "b")], "one root"),
    ([("r", "a"), ("a", "b"), ("r", "b")], "more than one parent"),
    ([("a", "b"), ("b", "a")], "one root"),
])
def test_invalid_hierarchies(edges, msg):
    with pytest.raises(ValueError, match=msg):
        LabelHierarchy.from_edges(edges)


def test_bad_edge_line(tmp_path):
    p = tmp_path / "h.tsv"
    p.write_text("r a\n")
    with pytest.raises(ValueError, match="parent<TAB>child"):
        LabelHierarchy.load(p)


def test_bundled_daliac_structure():
    h = bundled("daliac")
    leaves = h.leaves()
    groups = [v for v in h.nodes if v not in leaves]
    assert len(leaves) == 13 and len(groups) == 4
    assert all(h.parent[g] == h.root for g in groups)


def test_bundled_hapt_structure():
    h = bundled("hapt")
    assert len(h.leaves()) == 12
    assert len(h.children("transition")) == 6
