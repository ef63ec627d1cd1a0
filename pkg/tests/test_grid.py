import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sarseg.grid import (IntensityGrid, LabelField, build_cliques, expected_clique_count, neighbor_counts,
                         neighbors, overall_accuracy, permutation_accuracy)


def brute_pairs(w, h):
    out = set()
    for r1, c1, r2, c2 in itertools.product(range(h), range(w), range(h), range(w)):
        if (r1, c1) != (r2, c2) and max(abs(r1 - r2), abs(c1 - c2)) == 1:
            a, b = r1 * w + c1, r2 * w + c2
            out.add((max(a, b), min(a, b)))
    return out


def test_neighbors_center_corner_edge():
    assert sorted(neighbors(4, 3, 3)) == [0, 1, 2, 3, 5, 6, 7, 8]
    assert sorted(neighbors(0, 3, 3)) == [1, 3, 4]
    assert len(neighbors(1, 3, 3)) == 5
    assert neighbors(0, 2, 1) == [1]


def test_neighbors_out_of_range():
    with pytest.raises(IndexError):
        neighbors(9, 3, 3)
    with pytest.raises(IndexError):
        neighbors(-1, 3, 3)


@given(st.integers(1, 7), st.integers(1, 7))
def test_neighbors_symmetric(w, h):
    for p in range(w * h):
        for q in neighbors(p, w, h):
            assert p in neighbors(q, w, h)


@pytest.mark.parametrize("w,h,n", [(2, 2, 6), (3, 1, 2), (3, 3, 20), (1, 1, 0)])
def test_clique_counts_examples(w, h, n):
    assert len(build_cliques(w, h)) == n


def test_clique_identity_against_brute_force():
    for w in range(1, 17):
        for h in range(1, 17):
            cl = build_cliques(w, h)
            pairs = cl.pairs()
            assert len(pairs) == expected_clique_count(w, h)
            assert len(set(pairs)) == len(pairs)
            assert all(i > j for i, j in pairs)
            if w * h <= 64:
                assert set(pairs) == brute_pairs(w, h)


def test_grid_validation():
    with pytest.raises(ValueError):
        IntensityGrid(np.array([[1.0, -1.0]]))
    with pytest.raises(ValueError):
        IntensityGrid(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        IntensityGrid(np.zeros((0, 3)))
    g = IntensityGrid(np.arange(6.0).reshape(2, 3))
    assert (g.width, g.height, g.size) == (3, 2, 6)
    with pytest.raises(ValueError):
        g.values[0, 0] = 5.0


def test_label_field_validation():
    with pytest.raises(ValueError):
        LabelField(np.array([[0, 1]]), 2)
    with pytest.raises(ValueError):
        LabelField(np.array([[3, 1]]), 2)
    with pytest.raises(ValueError):
        LabelField(np.array([[1, 1]]), 1)
    x = LabelField.from_zero_based([0, 1, 1, 0], 2, (2, 2))
    assert x.labels.tolist() == [[1, 2], [2, 1]]
    assert x == LabelField(np.array([[1, 2], [2, 1]]), 2)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(2, 4), st.integers(0, 2**31))
def test_neighbor_counts_match_brute_force(w, h, c, seed):
    lab = np.random.default_rng(seed).integers(0, c, size=(h, w))
    counts = neighbor_counts(lab, c)
    for p in range(w * h):
        r, col = divmod(p, w)
        expect = np.bincount([lab.flat[q] for q in neighbors(p, w, h)], minlength=c)
        assert counts[r, col].tolist() == expect.tolist()


def test_overall_accuracy_examples():
    a = LabelField(np.array([[1, 2], [2, 1]]), 2)
    b = LabelField(np.array([[2, 1], [1, 2]]), 2)
    assert overall_accuracy(a, a) == 1.0
    assert overall_accuracy(a, b) == 0.0
    c = LabelField(np.array([[1, 2], [2, 2]]), 2)
    assert overall_accuracy(a, c) == 0.75
    with pytest.raises(ValueError):
        overall_accuracy(a, LabelField(np.ones((1, 4), int), 2))


@given(st.integers(2, 4), st.integers(0, 2**31))
def test_accuracy_permutation_properties(c, seed):
    rng = np.random.default_rng(seed)
    a = LabelField(rng.integers(1, c + 1, size=(4, 5)), c)
    b = LabelField(rng.integers(1, c + 1, size=(4, 5)), c)
    perm = rng.permutation(c) + 1
    pa = LabelField(perm[a.labels - 1], c)
    pb = LabelField(perm[b.labels - 1], c)
    assert overall_accuracy(pa, pb) == overall_accuracy(a, b)
    # best relabeling by exhaustive search
    best = max(overall_accuracy(LabelField(np.array(p)[a.labels - 1], c), b)
               for p in itertools.permutations(range(1, c + 1)))
    oa, mapping = permutation_accuracy(a, b)
    assert oa == pytest.approx(best)
    assert overall_accuracy(LabelField(np.array(mapping)[a.labels - 1], c), b) == pytest.approx(best)
