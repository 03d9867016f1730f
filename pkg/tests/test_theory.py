import numpy as np
import pytest

import driftlab as dl
from driftlab.exceptions import DriftLabError
from driftlab.theory import TheoryInputs


def scalar_inputs(h=2.0, r=1.0, mu=0.1, B=1, A=None, d=None):
    A = np.array([[0.75, 0.25], [0.25, 0.75]]) if A is None else A
    cm = dl.build_combination_matrix("custom", matrix=A)
    sd = dl.spectral_decompose(cm)
    K = A.shape[0]
    d = np.zeros((K, 1)) if d is None else np.asarray(d, dtype=float).reshape(K, 1)
    return TheoryInputs(H_bar=np.array([[h]]), R_bar_s=np.array([[r]]),
                        d=d, spectral=sd, mu=mu, B=B)


def random_inputs(rng, K=None, M=None, mu=0.01, B=1):
    K = K or int(rng.integers(3, 9))
    M = M or int(rng.integers(1, 5))
    graph = dl.random_connected_graph(K, p=0.5, seed=int(rng.integers(1 << 30)))
    cm = dl.build_combination_matrix("metropolis", graph=graph)
    sd = dl.spectral_decompose(cm)
    q, _ = np.linalg.qr(rng.standard_normal((M, M)))
    H = (q * rng.uniform(0.5, 2.0, M)) @ q.T
    noise = rng.standard_normal((M, M))
    R = noise @ noise.T / M
    d = rng.standard_normal((K, M))
    d -= d.mean(axis=0, keepdims=True)
    return TheoryInputs(H_bar=H, R_bar_s=R, d=d, spectral=sd, mu=mu, B=B)


def test_e_n_hand_value():
    inputs = scalar_inputs(h=2.0, r=1.0, mu=0.1)
    assert abs(dl.e_n(inputs, 0) - 0.09) <= 1e-15


def test_e_n_zero_step_size():
    inputs = scalar_inputs(mu=0.0)
    assert dl.e_n(inputs, 7) == 0.0


def test_e_n_limit_is_quarter_trace():
    inputs = scalar_inputs(h=2.0, r=3.0, mu=0.1)
    assert abs(dl.e_n(inputs, 10_000) - 0.75) <= 1e-12


def test_f_n_hand_values():
    inputs = scalar_inputs(d=[1.0, -1.0], h=2.0)
    assert abs(dl.f_n(inputs, "consensus", 100_000) - 4.0) <= 1e-9
    assert abs(dl.f_n(inputs, "diffusion", 100_000) - 1.0) <= 1e-9


def test_f_n_zero_cases():
    inputs = scalar_inputs(d=[1.0, -1.0])
    assert dl.f_n(inputs, "centralized", 10) == 0.0
    homogeneous = scalar_inputs(d=[0.0, 0.0])
    assert dl.f_n(homogeneous, "consensus", 10) == 0.0


def test_predict_er_structure():
    inputs = scalar_inputs(d=[1.0, -1.0], mu=0.05, B=4)
    n = np.arange(50)
    cen = dl.predict_er(inputs, "centralized", n)
    assert np.abs(np.asarray(cen.f_term)).max() == 0.0
    assert np.allclose(cen.total, inputs.mu / inputs.B * dl.e_n(inputs, n))
    con = dl.predict_er(inputs, "consensus", n)
    dif = dl.predict_er(inputs, "diffusion", n)
    assert np.all(dif.total <= con.total + 1e-15)


def test_homogeneous_predictions_coincide():
    inputs = scalar_inputs(d=[0.0, 0.0], mu=0.02, B=2)
    n = np.arange(20)
    totals = [dl.predict_er(inputs, alg, n).total for alg in dl.ALGORITHMS]
    assert np.abs(totals[0] - totals[1]).max() == 0.0
    assert np.abs(totals[0] - totals[2]).max() == 0.0


def test_steady_state_hand_value():
    inputs = scalar_inputs(h=2.0, r=1.0, mu=0.01, B=10)
    assert abs(dl.predict_steady_state(inputs, "centralized") - 2.5e-4) <= 1e-18


def test_steady_state_ordering_and_limit():
    rng = np.random.default_rng(3)
    for _ in range(10):
        inputs = random_inputs(rng, mu=0.005)
        vals = {alg: dl.predict_steady_state(inputs, alg)
                for alg in dl.ALGORITHMS}
        assert vals["centralized"] <= vals["diffusion"] + 1e-15
        assert vals["diffusion"] <= vals["consensus"] + 1e-15
        sigma_min = min(np.linalg.eigvalsh(inputs.H_bar))
        n_big = int(np.ceil(10.0 / (inputs.mu * sigma_min)))
        for alg in dl.ALGORITHMS:
            lim = dl.predict_er(inputs, alg, n_big).total
            assert abs(lim - vals[alg]) <= 1e-10


def test_upper_bound_dominates_prediction():
    rng = np.random.default_rng(5)
    n = np.arange(0, 200, 7)
    for _ in range(10):
        inputs = random_inputs(rng, mu=0.02)
        for alg in dl.ALGORITHMS:
            total = dl.predict_er(inputs, alg, n).total
            bound = dl.upper_bound(inputs, alg, n)
            assert np.all(bound >= total - 1e-12)


def test_upper_bound_tight_for_isotropic_centralized():
    inputs = scalar_inputs(h=1.5, r=2.0, mu=0.1, B=3)
    n = np.arange(30)
    bound = dl.upper_bound(inputs, "centralized", n)
    total = dl.predict_er(inputs, "centralized", n).total
    assert np.abs(bound - total).max() <= 1e-15


def test_upper_bound_reduces_without_heterogeneity():
    inputs = scalar_inputs(d=[0.0, 0.0], mu=0.05)
    n = np.arange(10)
    for alg in ("consensus", "diffusion"):
        assert np.abs(dl.upper_bound(inputs, alg, n)
                      - dl.upper_bound(inputs, "centralized", n)).max() == 0.0


def test_markov_stay_probability():
    assert abs(dl.markov_stay_probability(0.02, 0.1) - 0.8) <= 1e-15
    assert dl.markov_stay_probability(0.5, 0.1) == 0.0
    assert dl.markov_stay_probability(0.0, 0.1) == 1.0
    vals = dl.markov_stay_probability(np.linspace(0, 5, 17), 1.0)
    assert np.all((vals >= 0.0) & (vals <= 1.0))
    with pytest.raises(DriftLabError):
        dl.markov_stay_probability(0.1, 0.0)


def test_monotone_in_n():
    rng = np.random.default_rng(11)
    inputs = random_inputs(rng, mu=0.01)
    n = np.arange(0, 400)
    e_vals = dl.e_n(inputs, n)
    assert np.all(np.diff(e_vals) >= -1e-15)
    for alg in ("consensus", "diffusion"):
        f_vals = dl.f_n(inputs, alg, n)
        assert np.all(np.diff(f_vals) >= -1e-12 * max(1.0, f_vals.max()))


def test_batch_scaling_exact():
    inputs1 = scalar_inputs(d=[1.0, -1.0], mu=0.05, B=1)
    inputs2 = scalar_inputs(d=[1.0, -1.0], mu=0.05, B=2)
    n = np.arange(25)
    p1 = dl.predict_er(inputs1, "consensus", n)
    p2 = dl.predict_er(inputs2, "consensus", n)
    assert np.abs(np.asarray(p2.e_term) * 2 - p1.e_term).max() == 0.0
    assert np.abs(np.asarray(p2.f_term) - p1.f_term).max() == 0.0


def test_basis_invariance_under_degenerate_rotation():
    # ring K=4 has a repeated eigenvalue 1/3; rotate within that eigenspace
    cm = dl.build_combination_matrix("ring", K=4)
    sd = dl.spectral_decompose(cm)
    lam = sd.eigenvalues.copy()
    V = sd.V.copy()
    theta = 0.7
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    V2 = V.copy()
    V2[:, 1:3] = V[:, 1:3] @ rot  # the two lambda = 1/3 columns
    sd2 = dl.SpectralDecomposition(eigenvalues=lam, V=V2)
    rng = np.random.default_rng(0)
    d = rng.standard_normal((4, 2))
    d -= d.mean(axis=0, keepdims=True)
    H = np.diag([1.0, 2.0])
    R = np.eye(2)
    a = TheoryInputs(H_bar=H, R_bar_s=R, d=d, spectral=sd, mu=0.02, B=1)
    b = TheoryInputs(H_bar=H, R_bar_s=R, d=d, spectral=sd2, mu=0.02, B=1)
    for alg in ("consensus", "diffusion"):
        for n in (0, 3, 50):
            assert abs(dl.f_n(a, alg, n) - dl.f_n(b, alg, n)) <= 1e-10
        assert abs(dl.predict_steady_state(a, alg)
                   - dl.predict_steady_state(b, alg)) <= 1e-10


def test_rejects_non_contracting_step():
    with pytest.raises(DriftLabError):
        scalar_inputs(h=2.0, mu=0.6)  # mu * ||H|| = 1.2
