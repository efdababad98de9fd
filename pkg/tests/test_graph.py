import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lri.exceptions import ValidationError
from lri.graph import (AnalyticEdgeWeight, LearnedEdgeWeight, build_knn,
                       build_radius_graph, build_soft_graph, edge_geometry,
                       edge_feature_gradcheck, edge_weights, expanded_k,
                       knn_edges_torch)


def _coords(n=10, dim=3, seed=0):
    return np.random.default_rng(seed).normal(size=(n, dim))


def brute_force_knn(coords, k):
    """Independent oracle: per-node sort by (squared distance, index)."""
    n = len(coords)
    edges = set()
    for v in range(n):
        d2 = [(np.sum((coords[u] - coords[v]) ** 2), u) for u in range(n) if u != v]
        d2.sort()
        for _, u in d2[:min(k, n - 1)]:
            edges.add((u, v))
    return edges


class TestBuildKnn:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_matches_brute_force(self, seed, k):
        coords = _coords(n=12, seed=seed)
        g = build_knn(coords, k)
        assert set(zip(g.src, g.dst)) == brute_force_knn(coords, k)

    def test_edge_count(self):
        g = build_knn(_coords(n=9), k=4)
        assert g.n_edges == 9 * 4

    def test_k_capped_at_n_minus_1(self):
        g = build_knn(_coords(n=3), k=10)
        assert g.n_edges == 3 * 2 and g.k_used == 2

    def test_no_self_edges(self):
        g = build_knn(_coords(n=8), k=3)
        assert np.all(g.src != g.dst)

    def test_distances_exact(self):
        coords = _coords(n=8)
        g = build_knn(coords, k=3)
        d = np.linalg.norm(coords[g.src] - coords[g.dst], axis=1)
        assert np.allclose(g.dist, d, rtol=1e-12)
        g.validate(coords)

    def test_unit_displacements(self):
        coords = _coords(n=8)
        g = build_knn(coords, k=3)
        expect = (coords[g.src] - coords[g.dst]) / g.dist[:, None]
        assert np.allclose(g.unit_disp, expect, rtol=1e-12)
        assert np.allclose(np.linalg.norm(g.unit_disp, axis=1), 1.0)

    def test_tie_break_smaller_index(self):
        # point 0 at origin; 1 and 2 equidistant; k=1 must pick index 1
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
        g = build_knn(coords, k=1)
        nbrs = g.neighbor_lists()
        assert nbrs[0] == [1]

    def test_weights_all_one(self):
        g = build_knn(_coords(), k=2)
        assert np.all(g.weight == 1.0)

    def test_coincident_points_zero_unit(self):
        coords = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        g = build_knn(coords, k=1)
        mask = g.dist == 0.0
        assert mask.any()
        assert np.all(g.unit_disp[mask] == 0.0)

    def test_permutation_isomorphism(self):
        coords = _coords(n=11, seed=4)
        perm = np.random.default_rng(7).permutation(11)
        g = build_knn(coords, 4)
        gp = build_knn(coords[perm], 4)
        inv = np.argsort(perm)
        orig = {(u, v, round(d, 12)) for u, v, d in zip(g.src, g.dst, g.dist)}
        mapped = {(perm[u], perm[v]) for u, v in zip(g.src, g.dst)}
        assert mapped == set(zip(gp.src, gp.dst)) or \
            {(inv[u], inv[v], round(d, 12)) for u, v, d in zip(gp.src, gp.dst, gp.dist)} == orig

    def test_translation_invariance(self):
        coords = _coords(n=9, seed=2)
        g0 = build_knn(coords, 3)
        g1 = build_knn(coords + np.array([5.0, -3.0, 2.0]), 3)
        assert np.array_equal(g0.src, g1.src) and np.array_equal(g0.dst, g1.dst)
        assert np.allclose(g0.dist, g1.dist, atol=1e-9)
        assert np.allclose(g0.unit_disp, g1.unit_disp, atol=1e-9)

    def test_single_point_graph_empty(self):
        g = build_knn(np.zeros((1, 3)), k=5)
        assert g.n_edges == 0

    def test_invalid_k(self):
        with pytest.raises(ValidationError):
            build_knn(_coords(), k=0)


class TestRadiusGraph:
    def test_strict_bounds(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        g = build_radius_graph(coords, radius=1.5)
        pairs = set(zip(g.src, g.dst))
        assert (1, 0) in pairs and (0, 1) in pairs
        assert (2, 0) not in pairs and (0, 2) not in pairs  # d=2 > 1.5

    def test_radius_boundary_excluded(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0]])
        g = build_radius_graph(coords, radius=1.0)
        assert g.n_edges == 0  # open interval


class TestExpandedK:
    @pytest.mark.parametrize("k,expansion,n,expect", [
        (5, 1.5, 100, 8),   # ceil(7.5)
        (5, 1.0, 100, 5),
        (4, 1.5, 100, 6),
        (5, 1.5, 7, 6),     # capped at n-1
        (1, 2.0, 100, 2),
    ])
    def test_values(self, k, expansion, n, expect):
        assert expanded_k(k, expansion, n) == expect


class TestSoftGraph:
    def test_expanded_neighborhood_selection(self):
        coords = _coords(n=20, seed=1)
        g = build_soft_graph(coords, k=5, expansion=1.5)
        assert set(zip(g.src, g.dst)) == brute_force_knn(coords, 8)

    def test_default_weights_one(self):
        g = build_soft_graph(_coords(), k=3, expansion=1.5, phi=None)
        assert np.all(g.weight == 1.0)

    def test_analytic_weights_formula(self):
        coords = _coords(n=10, seed=3)
        phi = AnalyticEdgeWeight(length_scale=0.7)
        g = build_soft_graph(coords, k=3, expansion=1.5, phi=phi)
        assert np.allclose(g.weight, np.exp(-g.dist**2 / (2 * 0.7**2)))
        assert np.all((g.weight > 0) & (g.weight < 1))


class TestEdgeWeightMaps:
    def test_analytic_numpy_torch_agree(self):
        d_np = np.array([0.1, 0.5, 2.0])
        phi = AnalyticEdgeWeight(0.9)
        w_np = phi(d_np)
        w_t = phi(torch.tensor(d_np)).numpy()
        assert np.allclose(w_np, w_t, atol=1e-12)

    def test_analytic_decreasing_in_distance(self):
        phi = AnalyticEdgeWeight(1.0)
        d = np.linspace(0.01, 5, 50)
        w = phi(d)
        assert np.all(np.diff(w) < 0)

    def test_learned_in_open_unit_interval(self):
        torch.manual_seed(0)
        phi = LearnedEdgeWeight()
        w = phi(torch.rand(100) * 3).detach().numpy()
        assert np.all((w > 0) & (w < 1))

    def test_edge_weights_dispatcher(self):
        d = np.array([0.3, 1.2])
        assert np.allclose(edge_weights(None, d), 1.0)
        assert np.allclose(edge_weights(AnalyticEdgeWeight(1.0), d),
                           np.exp(-d**2 / 2))


class TestTorchGraphOps:
    def test_knn_edges_torch_matches_numpy(self):
        rng = np.random.default_rng(5)
        clouds = [rng.normal(size=(n, 3)) for n in (7, 4, 12)]
        coords = torch.tensor(np.concatenate(clouds))
        ptr = torch.tensor([0, 7, 11, 23])
        src, dst = knn_edges_torch(coords, ptr, k=3)
        got = set(zip(src.tolist(), dst.tolist()))
        expect = set()
        offset = 0
        for cloud in clouds:
            for u, v in brute_force_knn(cloud, 3):
                expect.add((u + offset, v + offset))
            offset += len(cloud)
        assert got == expect

    def test_edge_geometry_matches_manual(self):
        coords = torch.tensor(_coords(n=6, seed=8))
        g = build_knn(coords.numpy(), 2)
        src, dst = torch.tensor(g.src), torch.tensor(g.dst)
        dist, unit = edge_geometry(coords, src, dst)
        assert np.allclose(dist.numpy(), g.dist, atol=1e-12)
        assert np.allclose(unit.numpy(), g.unit_disp, atol=1e-12)

    def test_edge_geometry_differentiable(self):
        coords = torch.tensor(_coords(n=5, seed=9), requires_grad=True)
        g = build_knn(coords.detach().numpy(), 2)
        dist, unit = edge_geometry(coords, torch.tensor(g.src), torch.tensor(g.dst))
        (dist.sum() + unit.sum()).backward()
        assert torch.isfinite(coords.grad).all()


class TestEdgeFeatureGradcheck:
    def test_analytic_matches_fd(self):
        err = edge_feature_gradcheck(_coords(n=6, seed=11), k=3)
        assert err < 1e-4

    def test_rejects_large_clouds(self):
        with pytest.raises(ValidationError):
            edge_feature_gradcheck(_coords(n=50), k=3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 16), st.integers(1, 4))
def test_knn_brute_force_property(seed, n, k):
    coords = _coords(n=n, seed=seed)
    g = build_knn(coords, k)
    assert set(zip(g.src, g.dst)) == brute_force_knn(coords, k)
    g.validate(coords)
