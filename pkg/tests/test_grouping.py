import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semco.data import SYNTHETIC_CLASSES
from semco.fixtures import path as fixture_path
from semco.grouping import (
    LabelGrouping,
    cosine_distances,
    group_labels,
    group_scores,
    groups_as_json,
)
from semco.labelsem import build_label_matrix, read_embeddings


def brute_force_dbscan(M, eps, min_pts=2):
    """Partition (as sorted tuples of members) from exhaustive neighbourhoods.

    Core points are joined by union-find over core-core edges; a border point
    joins the cluster whose smallest core index is lowest; noise points stay
    alone.
    """
    u = M / np.linalg.norm(M, axis=1, keepdims=True)
    K = len(M)
    dist = np.array([[1 - np.clip(u[i] @ u[j], -1, 1) for j in range(K)] for i in range(K)])
    nbrs = [{j for j in range(K) if dist[i, j] <= eps} for i in range(K)]
    core = [len(n) >= min_pts for n in nbrs]
    parent = list(range(K))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for i in range(K):
        for j in nbrs[i]:
            if core[i] and core[j]:
                a, b = find(i), find(j)
                parent[max(a, b)] = min(a, b)
    cluster_of = {i: find(i) for i in range(K) if core[i]}
    seed = {}
    for i, root in cluster_of.items():
        seed[root] = min(seed.get(root, K), i)
    members = {}
    for i in range(K):
        if core[i]:
            key = cluster_of[i]
        else:
            roots = {cluster_of[j] for j in nbrs[i] if core[j]}
            key = min(roots, key=lambda r: seed[r]) if roots else ("noise", i)
        members.setdefault(key, []).append(i)
    return sorted(tuple(sorted(m)) for m in members.values())


def partition(grouping):
    return sorted(tuple(g) for g in grouping.groups())


class TestLabelGrouping:
    def test_matrix_rows_one_hot(self):
        g = LabelGrouping((0, 1, 0, 2), 0.2)
        G = g.matrix_G
        assert G.shape == (4, 3)
        np.testing.assert_array_equal(G.sum(axis=1), 1)
        assert g.members(0) == [0, 2]


class TestGroupLabels:
    def test_eps_zero_all_singletons(self, rng):
        M = rng.normal(size=(7, 5))
        M[3] = M[2]  # identical directions still stay apart
        assert group_labels(M, 0.0).Q == 7

    def test_eps_two_single_group(self, rng):
        assert group_labels(rng.normal(size=(9, 4)), 2.0).Q == 1

    def test_ids_follow_smallest_member(self, rng):
        M = rng.normal(size=(15, 3))
        g = group_labels(M, 0.3)
        firsts = [min(g.members(q)) for q in range(g.Q)]
        assert firsts == sorted(firsts)
        assert set(g.assignments) == set(range(g.Q)) and g.Q <= 15

    def test_noise_becomes_singleton(self):
        M = np.array([[1.0, 0.0], [0.99, 0.05], [0.0, 1.0]])
        assert partition(group_labels(M, 0.1)) == [(0, 1), (2,)]

    def test_permutation_consistency(self, rng):
        M = rng.normal(size=(20, 3))
        perm = rng.permutation(20)
        a = group_labels(M, 0.15)
        b = group_labels(M[perm], 0.15)
        relabeled = sorted(tuple(sorted(perm[k] for k in grp)) for grp in b.groups())
        assert relabeled == partition(a)

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_brute_force(self, seed):
        r = np.random.default_rng(seed)
        K = int(r.integers(1, 51))
        M = r.normal(size=(K, int(r.integers(2, 6))))
        eps = float(r.uniform(0.01, 0.6))
        assert partition(group_labels(M, eps)) == brute_force_dbscan(M, eps)

    def test_cifar100_fixture_groups(self):
        labels = fixture_path("cifar100_labels.txt").read_text().split()
        M = read_embeddings(fixture_path("cifar100_label_vectors.txt")).vectors
        named = groups_as_json(group_labels(M, 0.2), labels)["groups"]
        for pair in (["boy", "girl"], ["bicycle", "motorcycle"], ["man", "woman"], ["oak_tree", "pine_tree"]):
            assert pair in named

    def test_cifar100_large_eps_single_group(self):
        M = read_embeddings(fixture_path("cifar100_label_vectors.txt")).vectors
        assert group_labels(M, 0.75).Q == 1

    def test_cifar10_fixture_singletons(self):
        M = read_embeddings(fixture_path("cifar10_label_vectors.txt")).vectors
        assert group_labels(M, 0.2).Q == 10

    def test_synthetic_classes_form_four_pairs(self, merged):
        M = build_label_matrix(merged, SYNTHETIC_CLASSES).vectors
        assert partition(group_labels(M, 0.2)) == [(0, 1), (2, 3), (4, 5), (6, 7)]


class TestGroupScores:
    def test_singletons_identity(self, rng):
        p = rng.dirichlet(np.ones(6))
        np.testing.assert_allclose(group_scores(p, LabelGrouping.singletons(6)), p)

    def test_pair_adds(self):
        g = LabelGrouping((0, 0, 1), 0.2)
        assert group_scores([0.40, 0.35, 0.25], g)[0] == pytest.approx(0.75)

    def test_uniform_gives_group_sizes(self):
        g = LabelGrouping((0, 1, 0, 2, 0), 0.2)
        np.testing.assert_allclose(group_scores(np.full(5, 0.2), g), [3 / 5, 1 / 5, 1 / 5])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            group_scores([0.5, 0.5], LabelGrouping((0, 0, 1), 0.2))


class TestJson:
    def test_multi_member_groups_first_sorted(self):
        g = LabelGrouping((0, 1, 0, 2), 0.2)
        out = groups_as_json(g, ["zebra", "ant", "cat", "bee"])
        assert out == {"eps": 0.2, "groups": [["cat", "zebra"], ["ant"], ["bee"]]}


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_group_dominance(K, seed):
    r = np.random.default_rng(seed)
    p = r.dirichlet(np.ones(K))
    g = LabelGrouping.singletons(K) if K == 1 else group_labels(r.normal(size=(K, 3)), float(r.uniform(0, 1)))
    scores = group_scores(p, g)
    assert scores.sum() == pytest.approx(p.sum())
    for k in range(K):
        assert scores[g.assignments[k]] >= p[k] - 1e-15


def test_cosine_distance_range(rng):
    d = cosine_distances(rng.normal(size=(10, 4)))
    assert np.all(d >= 0) and np.all(d <= 2)
    np.testing.assert_allclose(np.diag(d), 0, atol=1e-12)
