import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hcmat.cluster import (Cluster, admissible, build_block_partition, build_cluster_tree,
                           mesh_partition, vertex_supports)
from hcmat.errors import ConfigError
from hcmat.geometry_fem import Mesh


def box(lo, hi):
    lo, hi = np.atleast_1d(np.asarray(lo, float)), np.atleast_1d(np.asarray(hi, float))
    return Cluster(0, 1, lo, hi)


def cover_count(part, n):
    count = np.zeros((n, n), dtype=int)
    for b in part.leaves:
        rows = part.row_tree.indices(b.t)
        cols = part.col_tree.indices(b.s)
        count[np.ix_(rows, cols)] += 1
    return count


def test_collinear_points_split_order():
    tree = build_cluster_tree(np.arange(8.0)[:, None], n_min=2)
    assert tree.depth == 2
    root = tree.root
    assert sorted(tree.indices(root.children[0])) == [0, 1, 2, 3]
    assert sorted(tree.indices(root.children[1])) == [4, 5, 6, 7]
    leaves = [sorted(tree.indices(c)) for c in tree.leaves()]
    assert leaves == [[0, 1], [2, 3], [4, 5], [6, 7]]


def test_small_index_set_is_single_leaf():
    tree = build_cluster_tree(np.random.default_rng(0).random((5, 2)), n_min=8)
    assert tree.root.is_leaf and len(tree.nodes) == 1


def test_leaf_ranges_form_permutation_and_boxes_contain_supports():
    mesh = Mesh(2, 17)
    lo, hi = vertex_supports(mesh, mesh.interior)
    tree = build_cluster_tree((lo, hi), n_min=16)
    assert np.array_equal(np.sort(tree.perm), np.arange(mesh.interior.size))
    pos = 0
    for leaf in tree.leaves():
        assert leaf.lo == pos and leaf.size <= 16
        pos = leaf.hi
    assert pos == tree.n
    for c in tree.nodes:
        idx = tree.indices(c)
        assert np.all(lo[idx] >= c.bbox_lo) and np.all(hi[idx] <= c.bbox_hi)
        if c.children:
            a, b = c.children
            assert a.lo == c.lo and a.hi == b.lo and b.hi == c.hi


def test_degenerate_split_falls_back_to_halving():
    pts = np.zeros((10, 2))
    tree = build_cluster_tree(pts, n_min=3)
    assert all(leaf.size <= 3 for leaf in tree.leaves())


def test_admissibility_examples():
    assert admissible(box([0, 0], [1, 1]), box([3, 0], [4, 1]), eta=1.0)
    t = box([0, 0], [1, 1])
    for eta in (0.1, 1.0, 1e9):
        assert not admissible(t, t, eta)
    assert not admissible(box(0, 1), box(1.5, 2.5), eta=0.5)
    assert admissible(box(0, 1), box(1.5, 2.5), eta=2.0)
    with pytest.raises(ConfigError):
        admissible(t, t, eta=0.0)


def test_huge_eta_gives_four_blocks():
    tree = build_cluster_tree(np.arange(8.0)[:, None], n_min=4)
    part = build_block_partition(tree, tree, eta=1e9)
    assert len(part.leaves) == 4
    assert [b.admissible for b in part.leaves] == [False, True, True, False]


def test_single_block_when_small():
    tree = build_cluster_tree(np.random.default_rng(1).random((20, 2)), n_min=32)
    part = build_block_partition(tree, tree)
    assert len(part.leaves) == 1 and not part.leaves[0].admissible


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 300), dim=st.integers(1, 3), n_min=st.integers(1, 40),
       eta=st.floats(0.1, 10.0), seed=st.integers(0, 2 ** 31))
def test_partition_cover_property(n, dim, n_min, eta, seed):
    pts = np.random.default_rng(seed).random((n, dim))
    tree = build_cluster_tree(pts, n_min)
    part = build_block_partition(tree, tree, eta)
    assert np.all(cover_count(part, n) == 1)
    for b in part.leaves:
        assert b.admissible == admissible(b.t, b.s, eta)
        assert b.admissible or min(b.t.size, b.s.size) <= n_min


def test_admissible_fraction_monotone_in_eta():
    mesh = Mesh(2, 33)
    fracs = [mesh_partition(mesh, eta, 16).admissible_fraction() for eta in (0.5, 1, 2, 4, 8)]
    assert all(a <= b for a, b in zip(fracs, fracs[1:]))
    assert fracs[-1] > 0.5


def test_dump_csv(tmp_path):
    part = mesh_partition(Mesh(2, 17), 2.0, 16)
    path = part.dump_csv(tmp_path / "p.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "block_id,row_lo,row_hi,col_lo,col_hi,admissible"
    assert len(lines) == len(part.leaves) + 1
    area = sum((int(r[2]) - int(r[1])) * (int(r[4]) - int(r[3]))
               for r in (line.split(",") for line in lines[1:]))
    assert area == part.row_tree.n ** 2


def test_bad_parameters():
    with pytest.raises(ConfigError):
        build_cluster_tree(np.zeros((3, 2)), n_min=0)
    with pytest.raises(ConfigError):
        build_cluster_tree(np.zeros((0, 2)))
