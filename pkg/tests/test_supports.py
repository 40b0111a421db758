import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mscos.errors import DisjointnessError, InconsistentOverlapError, InvalidArgument
from mscos.supports import (ArealSupport, OverlapTable, PartitionMatrix,
                            assemble_block_partition, build_grid_support,
                            build_partition_matrix, diag_ppt, rectangle_overlaps)

from conftest import FIG1_AREAS, FIG1_B, FIG1_C


def brute_rook(support):
    """Neighbours by checking every pair of rectangles for a shared edge."""
    n = support.n
    out = np.zeros((n, n), bool)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            a, b = support.rectangles[i], support.rectangles[j]
            share_x = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
            share_y = max(0.0, min(a[3], b[3]) - max(a[2], b[2]))
            vert = np.isclose(a[1], b[0]) or np.isclose(a[0], b[1])
            horiz = np.isclose(a[3], b[2]) or np.isclose(a[2], b[3])
            out[i, j] = (vert and share_y > 1e-12) or (horiz and share_x > 1e-12)
    return out


def test_grid_10x10_areas():
    g = build_grid_support(10, 10)
    assert g.n == 100
    np.testing.assert_allclose(g.areas, 0.01, rtol=1e-12)
    np.testing.assert_allclose(g.centroids[0], [0.05, 0.05])


def test_grid_single_cell():
    g = build_grid_support(1, 1)
    assert g.n == 1 and not g.adjacency.any()


def test_grid_20x20_neighbours_match_brute_force():
    g = build_grid_support(20, 20)
    np.testing.assert_array_equal(g.adjacency, brute_rook(g))
    deg = g.degrees().reshape(20, 20)
    assert np.all(deg[1:-1, 1:-1] == 4)
    assert deg[0, 0] == 2 and deg[0, 5] == 3


@pytest.mark.parametrize("bounds", [(0, 0, 0, 1), (1, 0, 0, 1), (0, 1, 2, 2)])
def test_grid_degenerate_bounds(bounds):
    with pytest.raises(InvalidArgument):
        build_grid_support(2, 2, bounds)


def test_support_invariants():
    with pytest.raises(InvalidArgument):
        ArealSupport(["a", "a"], [1, 1], np.zeros((2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(InvalidArgument):
        ArealSupport(["a", "b"], [1, 0], np.zeros((2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(InvalidArgument):
        ArealSupport(["a", "b"], [1, 1], np.zeros((2, 2)), np.array([[0, 1], [0, 0]], bool))
    with pytest.raises(InvalidArgument):
        ArealSupport(["a"], [1], np.zeros((1, 2)), np.ones((1, 1), bool))


def test_overlap_table_invariants():
    with pytest.raises(DisjointnessError):
        OverlapTable.from_rows([("a1", "b1", 0.5), ("a1", "b2", 0.5)])
    with pytest.raises(InvalidArgument):
        OverlapTable.from_rows([("a1", "b1", 0.0)])


def test_fig1_rows(fig1):
    A, B, C = fig1["A"], fig1["B"], fig1["C"]
    P1 = build_partition_matrix(B, A, fig1["overlaps_B"])
    P2 = build_partition_matrix(C, A, fig1["overlaps_C"])
    np.testing.assert_array_equal(P1.matrix[0], np.eye(9)[0])
    idx = [2, 3, 4, 7]
    expected = np.zeros(9)
    expected[idx] = FIG1_AREAS[idx] / FIG1_AREAS[idx].sum()
    np.testing.assert_allclose(P2.matrix[0], expected, rtol=0, atol=1e-15)
    for P in (P1, P2):
        assert np.abs(P.matrix.sum(axis=1) - 1).max() < 1e-9


def test_fig1_aggregation_matches_brute_force(fig1):
    A = fig1["A"]
    P1 = build_partition_matrix(fig1["B"], A, fig1["overlaps_B"])
    P2 = build_partition_matrix(fig1["C"], A, fig1["overlaps_C"])
    y = np.random.default_rng(4).normal(size=9)
    for P, groups in ((P1, FIG1_B), (P2, FIG1_C)):
        agg = P.aggregate(y)
        for i, members in enumerate(groups.values()):
            j = [A.index(m) for m in members]
            assert agg[i] == pytest.approx(np.sum(FIG1_AREAS[j] * y[j]) / FIG1_AREAS[j].sum(),
                                           rel=1e-13)


def test_fig1_block(fig1):
    A = fig1["A"]
    P1 = build_partition_matrix(fig1["B"], A, fig1["overlaps_B"])
    P2 = build_partition_matrix(fig1["C"], A, fig1["overlaps_C"])
    P = assemble_block_partition(P1, P2)
    assert P.shape == (6, 18)
    nnz = (P.matrix > 0).sum(axis=0)
    assert nnz.max() <= 1
    np.testing.assert_array_equal(P.matrix[:4, 9:], 0)
    np.testing.assert_array_equal(P.matrix[4:, :9], 0)


def test_equal_area_row():
    fine = build_grid_support(2, 2)
    coarse = build_grid_support(1, 1)
    P = build_partition_matrix(coarse, fine, rectangle_overlaps(coarse, fine))
    np.testing.assert_allclose(P.matrix, [[0.25] * 4])
    np.testing.assert_allclose(diag_ppt(P), [0.25])


def test_block_of_identities():
    I1 = PartitionMatrix(np.eye(1))
    np.testing.assert_array_equal(assemble_block_partition(I1, I1).matrix, np.eye(2))


def test_block_mismatched_fine():
    with pytest.raises(InvalidArgument):
        assemble_block_partition(PartitionMatrix(np.eye(2)), PartitionMatrix(np.eye(3)))


def test_unknown_id(fig1):
    bad = OverlapTable.from_rows([("A1", "Bx", 1.0)])
    with pytest.raises(InvalidArgument):
        build_partition_matrix(fig1["B"], fig1["A"], bad)


def test_inconsistent_overlap_names_unit(fig1):
    rows = [r for r in fig1["overlaps_B"].rows() if r[0] != "A3"]
    with pytest.raises(InconsistentOverlapError) as info:
        build_partition_matrix(fig1["B"], fig1["A"], OverlapTable.from_rows(rows))
    assert info.value.coarse_id == "B2"


def test_clip_normalizes_observed_overlap(fig1):
    rows = [r for r in fig1["overlaps_B"].rows() if r[0] != "A3"]
    P = build_partition_matrix(fig1["B"], fig1["A"], OverlapTable.from_rows(rows), clip=True)
    np.testing.assert_allclose(P.matrix.sum(axis=1), 1.0, atol=1e-12)
    assert P.matrix[1, 1] == 1.0


def test_diag_ppt_examples():
    np.testing.assert_array_equal(diag_ppt(PartitionMatrix(np.eye(3))), np.ones(3))
    for k in (1, 2, 5, 9):
        assert diag_ppt(PartitionMatrix(np.full((1, k), 1.0 / k)))[0] == pytest.approx(1.0 / k)


def test_diag_ppt_rejects_overlap():
    P = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])
    with pytest.raises(DisjointnessError):
        diag_ppt(P)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=12),
       st.integers(1, 5), st.randoms(use_true_random=False))
def test_random_partitions(areas, n_coarse, rnd):
    """Random groupings of fine units into coarse units."""
    n = len(areas)
    n_coarse = min(n_coarse, n)
    labels = list(range(n_coarse)) + [rnd.randrange(n_coarse) for _ in range(n - n_coarse)]
    rnd.shuffle(labels)
    cents = np.zeros((n, 2))
    fine = ArealSupport([f"f{i}" for i in range(n)], areas, cents, np.zeros((n, n), bool))
    c_areas = [sum(a for a, l in zip(areas, labels) if l == c) for c in range(n_coarse)]
    coarse = ArealSupport([f"c{c}" for c in range(n_coarse)], c_areas,
                          np.zeros((n_coarse, 2)), np.zeros((n_coarse, n_coarse), bool))
    table = OverlapTable.from_rows((f"f{i}", f"c{l}", a) for i, (a, l) in enumerate(zip(areas, labels)))
    P = build_partition_matrix(coarse, fine, table)
    assert np.abs(P.matrix.sum(axis=1) - 1).max() < 1e-9
    d = diag_ppt(P)
    assert np.all((d > 0) & (d <= 1 + 1e-12))
    ppt = P.matrix @ P.matrix.T
    assert np.abs(ppt - np.diag(np.diag(ppt))).max() < 1e-12
