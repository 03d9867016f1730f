import numpy as np
import pytest

import driftlab as dl
from driftlab._linalg import jacobi_eigh, sorted_eigh
from driftlab.exceptions import NonConvergenceError, TopologyError


def test_ring4_metropolis_weights():
    cm = dl.build_combination_matrix("ring", K=4)
    nonzero = cm.A[cm.A > 0]
    assert np.allclose(nonzero, 1.0 / 3.0, atol=1e-15)
    assert np.count_nonzero(cm.A) == 12  # self + two neighbors per node


def test_centralized_is_uniform():
    cm = dl.build_combination_matrix("centralized", K=3)
    assert np.allclose(cm.A, 1.0 / 3.0, atol=0)


@pytest.mark.parametrize("kind", ["ring", "centralized"])
def test_single_agent_matrix(kind):
    cm = dl.build_combination_matrix(kind, K=1)
    assert cm.A.shape == (1, 1) and cm.A[0, 0] == 1.0


def test_reject_k_zero():
    with pytest.raises(TopologyError):
        dl.build_combination_matrix("ring", K=0)


def test_reject_disconnected_graph():
    adj = np.zeros((4, 4), dtype=bool)
    adj[0, 1] = adj[1, 0] = True
    adj[2, 3] = adj[3, 2] = True
    with pytest.raises(TopologyError):
        dl.build_combination_matrix("metropolis", graph=dl.Graph(adj))


def test_validate_passes_uniform():
    report = dl.validate(dl.build_combination_matrix("centralized", K=3))
    assert report.passed


def test_validate_flags_missing_self_loop():
    # 4-cycle with off-diagonal weights 1/2 and zero diagonal
    A = np.zeros((4, 4))
    for k in range(4):
        A[k, (k + 1) % 4] = A[(k + 1) % 4, k] = 0.5
    report = dl.validate(A)
    assert not report.passed
    assert report.failures() == ["self_loop"]


def test_validate_flags_disconnected_blocks():
    half = np.full((2, 2), 0.5)
    A = np.zeros((4, 4))
    A[:2, :2] = half
    A[2:, 2:] = half
    report = dl.validate(A)
    assert "strong_connectivity" in report.failures()


def test_perron_vector_uniform():
    for cm in (dl.build_combination_matrix("ring", K=4),
               dl.build_combination_matrix("centralized", K=5)):
        pi = dl.perron_vector(cm)
        assert np.abs(pi - 1.0 / cm.K).max() <= 1e-10
        assert np.abs(cm.A @ pi - pi).max() <= 1e-12
    assert dl.perron_vector(dl.build_combination_matrix("ring", K=1)) == [1.0]


def test_ring4_spectrum():
    sd = dl.spectral_decompose(dl.build_combination_matrix("ring", K=4))
    assert np.allclose(sd.eigenvalues, [1, 1 / 3, 1 / 3, -1 / 3], atol=1e-12)


def test_centralized_spectrum_is_zero_block():
    sd = dl.spectral_decompose(dl.build_combination_matrix("centralized", K=5))
    assert np.abs(sd.P_alpha).max() <= 1e-12
    assert sd.eigenvalues[0] == 1.0


def test_single_agent_spectrum():
    sd = dl.spectral_decompose(dl.build_combination_matrix("ring", K=1))
    assert sd.eigenvalues.tolist() == [1.0]
    assert sd.V_alpha.shape == (1, 0)


@pytest.mark.parametrize("seed", range(12))
def test_spectral_invariants_random_graphs(seed):
    K = [4, 8, 16, 33][seed % 4]
    graph = dl.random_connected_graph(K, p=0.3, seed=seed)
    cm = dl.build_combination_matrix("metropolis", graph=graph)
    assert np.abs(cm.A.sum(axis=0) - 1).max() <= 1e-12
    assert np.abs(cm.A.sum(axis=1) - 1).max() <= 1e-12
    assert np.abs(cm.A - cm.A.T).max() <= 1e-12
    sd = dl.spectral_decompose(cm)
    recon = sd.V @ np.diag(sd.eigenvalues) @ sd.V.T
    assert np.linalg.norm(cm.A - recon) <= 1e-10
    assert np.linalg.norm(sd.V @ sd.V.T - np.eye(K)) <= 1e-10
    assert np.abs(sd.V[:, 0] - 1 / np.sqrt(K)).max() <= 1e-14
    assert np.abs(sd.V_alpha.sum(axis=0)).max() <= 1e-10
    assert np.abs(sd.P_alpha).max() < 1.0
    # projector identity: (1/K) 11^T + V_alpha V_alpha^T = I
    proj = np.full((K, K), 1.0 / K) + sd.V_alpha @ sd.V_alpha.T
    assert np.abs(proj - np.eye(K)).max() <= 1e-10


def test_eigenvalue_ordering_convention():
    sd = dl.spectral_decompose(dl.build_combination_matrix("ring", K=6))
    mags = np.abs(sd.eigenvalues)
    assert all(mags[i] >= mags[i + 1] - 1e-15 for i in range(5))
    # magnitude ties break by descending signed value
    for i in range(5):
        if abs(mags[i] - mags[i + 1]) <= 1e-13:
            assert sd.eigenvalues[i] >= sd.eigenvalues[i + 1]


def test_jacobi_against_lapack_oracle():
    rng = np.random.default_rng(7)
    for n in (1, 2, 5, 16):
        raw = rng.standard_normal((n, n))
        sym = 0.5 * (raw + raw.T)
        w, v = jacobi_eigh(sym)
        assert np.linalg.norm(sym - (v * w) @ v.T) <= 1e-12 * max(1, np.linalg.norm(sym))
        expected = np.sort(np.linalg.eigvalsh(sym))
        assert np.abs(np.sort(w) - expected).max() <= 1e-10


def test_sorted_eigh_order():
    w, _ = sorted_eigh(np.diag([0.5, -0.9, 0.9, 0.1]))
    assert w.tolist() == [0.9, -0.9, 0.5, 0.1]


def test_graph_from_edges_validation():
    with pytest.raises(TopologyError):
        dl.Graph.from_edges(3, [(0, 5)])
    g = dl.Graph.from_edges(3, [(0, 1), (1, 2)])
    assert g.K == 3 and g.adjacency[0, 1] and g.adjacency[2, 1]


def test_random_graph_deterministic_and_connected():
    g1 = dl.random_connected_graph(16, p=0.3, seed=5)
    g2 = dl.random_connected_graph(16, p=0.3, seed=5)
    assert np.array_equal(g1.adjacency, g2.adjacency)
    dl.build_combination_matrix("metropolis", graph=g1)  # validates connectivity


def test_matrix_csv_roundtrip(tmp_path):
    cm = dl.build_combination_matrix("ring", K=5)
    path = tmp_path / "matrix.csv"
    cm.to_csv(path)
    back = np.loadtxt(path, delimiter=",")
    assert np.array_equal(back, cm.A)  # 17 significant digits round-trip


def test_perron_power_iteration_budget():
    cm = dl.build_combination_matrix("ring", K=4)
    with pytest.raises(NonConvergenceError):
        dl.perron_vector(cm, max_iter=1)
