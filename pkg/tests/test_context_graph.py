import numpy as np
import pytest

from dhcn.context_graph import (DIRECTIONS, GeometricContext, GridSpec, build_geometric_adjacency,
                                build_semantic_adjacency, load_semantic_links, row_normalize)
from dhcn.errors import ValidationError


def support(mat):
    return {(int(i), int(j)) for i, j in zip(*np.nonzero(mat))}


def test_two_by_two_examples():
    g = GridSpec(2, 2)
    assert support(build_geometric_adjacency(g, 1, "right")) == {(0, 1), (2, 3)}
    assert support(build_geometric_adjacency(g, 1, "top")) == {(2, 0), (3, 1)}


def test_diagonal_tie_goes_horizontal():
    adj = build_geometric_adjacency(GridSpec(3, 3), 2, "right")
    assert set(np.flatnonzero(adj[0])) == {1, 2, 4}


def test_geometric_errors():
    with pytest.raises(ValidationError, match="direction"):
        build_geometric_adjacency(GridSpec(2, 2), 1, "up")
    with pytest.raises(ValidationError, match="radius"):
        build_geometric_adjacency(GridSpec(2, 2), 0.5, "top")
    with pytest.raises(ValidationError):
        GridSpec(0, 3)


@pytest.mark.parametrize("shape,radius", [((3, 4), 1), ((5, 5), 2), ((4, 6), 2.5), ((1, 5), 3)])
def test_sector_partition(shape, radius):
    g = GridSpec(*shape)
    sup = np.stack([build_geometric_adjacency(g, radius, d) for d in DIRECTIONS])
    assert sup.sum(axis=0).max() <= 1  # pairwise disjoint
    rows, cols = g.coords()
    dist2 = (rows[:, None] - rows[None, :]) ** 2 + (cols[:, None] - cols[None, :]) ** 2
    disk = (dist2 <= radius * radius) & ~np.eye(g.n_cells, dtype=bool)
    np.testing.assert_array_equal(sup.sum(axis=0) > 0, disk)


def test_translation_consistency():
    g, r = GridSpec(7, 7), 2
    rows, cols = g.coords()
    interior = [i for i in range(g.n_cells) if r <= rows[i] < 7 - r and r <= cols[i] < 7 - r]
    for d in DIRECTIONS:
        adj = build_geometric_adjacency(g, r, d)
        patterns = {tuple(sorted((rows[j] - rows[i], cols[j] - cols[i]) for j in np.flatnonzero(adj[i])))
                    for i in interior}
        assert len(patterns) == 1


def test_geometric_context_is_row_stochastic():
    ctx = GeometricContext.build(GridSpec(3, 4), 1.5)
    sums = ctx.matrices.sum(axis=2)
    assert np.all((np.abs(sums - 1) < 1e-12) | (sums == 0))
    assert np.all(ctx.matrices[~ctx.masks] == 0)


def test_row_normalize(rng):
    np.testing.assert_array_equal(row_normalize([[2, 2], [0, 0]]), [[0.5, 0.5], [0, 0]])
    a = rng.random((4, 4)) + 0.01
    once = row_normalize(a)
    np.testing.assert_allclose(once.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(row_normalize(once), once, rtol=1e-15, atol=0)
    with pytest.raises(ValidationError):
        row_normalize([[1.0, -1.0]])


def test_semantic_knn_examples():
    adj, mask = build_semantic_adjacency([[1, 0], [0.9, 0.1], [-1, 0]], 1, "cosine")
    assert [int(np.flatnonzero(r)[0]) for r in mask] == [1, 0, 1]
    np.testing.assert_array_equal(adj, mask.astype(float))
    _, mask = build_semantic_adjacency(np.random.default_rng(0).random((5, 3)), 4)
    np.testing.assert_array_equal(mask, ~np.eye(5, dtype=bool))
    adj, mask = build_semantic_adjacency(np.ones((5, 2)), 2)
    assert [tuple(np.flatnonzero(r)) for r in mask] == [(1, 2), (0, 2), (0, 1), (0, 1), (0, 1)]
    np.testing.assert_allclose(adj.sum(axis=1), 1)


def test_semantic_knn_cardinality(rng):
    for k in (1, 3, 6):
        _, mask = build_semantic_adjacency(rng.random((9, 4)), k, "dot")
        assert np.all(mask.sum(axis=1) == k)
        assert not mask.diagonal().any()


def test_semantic_zero_row_falls_back_to_dot():
    _, mask = build_semantic_adjacency([[0, 0], [1, 0], [2, 0]], 1, "cosine")
    # row 0 has all-zero dot products, so the index tie-break picks image 1
    assert np.flatnonzero(mask[0]).tolist() == [1]


def test_semantic_errors():
    with pytest.raises(ValidationError, match="smaller"):
        build_semantic_adjacency(np.ones((3, 2)), 3)
    with pytest.raises(ValidationError):
        build_semantic_adjacency(np.ones((3, 2)), 1, "euclid")


def test_semantic_links():
    ids = ["a", "b", "c"]
    adj, mask = load_semantic_links([], ids)
    assert not adj.any() and not mask.any()
    adj, _ = load_semantic_links([("a", "b"), ("a", "c")], ids)
    np.testing.assert_array_equal(adj[0], [0, 0.5, 0.5])
    adj, _ = load_semantic_links([("a", "b"), ("a", "b"), ("a", "c")], ids)
    np.testing.assert_array_equal(adj[0], [0, 0.5, 0.5])
    with pytest.raises(ValidationError, match="'zz'"):
        load_semantic_links([("a", "zz")], ids)
