import numpy as np
import pytest

import driftlab as dl
from driftlab.exceptions import ModelError


def scalar_quadratic(H_vals, w_vals, noise=1.0):
    K = len(H_vals)
    return dl.QuadraticNetwork(
        H=np.array(H_vals, dtype=float).reshape(K, 1, 1),
        w_loc=np.array(w_vals, dtype=float).reshape(K, 1),
        noise_mode="additive",
        R_blocks=np.full((K, 1, 1), noise))


def test_common_hessian_hand_example():
    model = scalar_quadratic([2.0, 2.0], [-1.0, 1.0])
    info = dl.minimizer_summary(model)
    assert np.allclose(info.w_star, 0.0, atol=1e-14)
    assert np.allclose(info.d.ravel(), [2.0, -2.0], atol=1e-14)
    assert info.epsilon <= 1e-14


def test_weighted_minimizer_hand_example():
    model = scalar_quadratic([1.0, 3.0], [0.0, 4.0])
    info = dl.minimizer_summary(model)
    assert np.allclose(info.w_star, 3.0, atol=1e-12)


def test_zero_spread_means_homogeneous():
    model = dl.make_quadratic_network(5, 3, minimizer_spread=0.0, seed=1)
    info = dl.minimizer_summary(model)
    assert np.abs(info.d).max() <= 1e-12


def test_quadratic_global_eval_hand_values():
    model = scalar_quadratic([2.0, 2.0], [-1.0, 1.0])
    at_star = dl.global_eval(model, [0.0])
    assert abs(at_star["grad"][0]) <= 1e-14
    assert abs(at_star["J"] - 1.0) <= 1e-14  # each agent contributes 1/2*2*1


def test_first_order_optimality_and_gradient_cancellation():
    for seed in range(5):
        model = dl.make_quadratic_network(6, 4, hessian_mode="heterogeneous",
                                          minimizer_spread=2.0, seed=seed)
        info = dl.minimizer_summary(model)
        _, grad = model.global_eval(info.w_star)
        assert np.linalg.norm(grad) <= 1e-9
        assert np.linalg.norm(info.d.sum(axis=0)) <= 1e-9


def test_dataset_mode_hessian_identity_and_exact_minimizers():
    model = dl.make_quadratic_network(3, 4, hessian_mode="heterogeneous",
                                      dataset_size=32, noise_mode="dataset",
                                      noise_scale=2.0, seed=3)
    for k in range(3):
        feats, labels = model.datasets[k]
        emp = feats.T @ feats / labels.size
        assert np.abs(emp - model.H[k]).max() <= 1e-10
        # projected label noise keeps the requested minimizer exact
        resid = feats.T @ (feats @ model.w_loc[k] - labels) / labels.size
        assert np.abs(resid).max() <= 1e-12


def test_dataset_and_additive_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    models = [
        dl.make_quadratic_network(3, 3, dataset_size=24, noise_mode="dataset",
                                  noise_scale=1.0, seed=11),
        dl.make_quadratic_network(4, 2, noise_mode="additive", seed=12),
        dl.make_double_well_network(3, [0.3, -0.1, -0.2], seed=13),
    ]
    step = 1e-6
    for model in models:
        for _ in range(34):
            w = rng.standard_normal(model.M)
            _, grad = model.global_eval(w)
            for i in range(model.M):
                e = np.zeros(model.M)
                e[i] = step
                jp, _ = model.global_eval(w + e)
                jm, _ = model.global_eval(w - e)
                fd = (jp - jm) / (2 * step)
                assert abs(fd - grad[i]) <= 1e-6 * max(1.0, abs(grad[i]))


def test_global_noise_covariance_is_scaled_block_sum():
    model = dl.make_quadratic_network(4, 3, noise_mode="additive",
                                      noise_kind="spd", seed=5)
    info = dl.minimizer_summary(model)
    expected = info.R_s_blocks.sum(axis=0) / 16.0
    assert np.abs(info.R_bar_s - expected).max() <= 1e-12


def test_flatness_metrics_hand_example():
    model = dl.QuadraticNetwork(H=np.diag([1.0, 3.0])[None].repeat(2, axis=0),
                                w_loc=np.zeros((2, 2)), noise_mode="additive",
                                R_blocks=np.repeat(np.eye(2)[None], 2, axis=0))
    info = dl.minimizer_summary(model)
    assert abs(info.flatness.trace - 4.0) <= 1e-12
    assert abs(info.flatness.spectral_norm - 3.0) <= 1e-10
    assert abs(info.flatness.frobenius_norm - np.sqrt(10.0)) <= 1e-12
    assert info.flatness.chain_holds(M=2)


def test_flatness_chain_random_hessians():
    rng = np.random.default_rng(9)
    for _ in range(25):
        m = rng.integers(1, 6)
        q, _ = np.linalg.qr(rng.standard_normal((m, m)))
        H = (q * rng.uniform(0.1, 5.0, m)) @ q.T
        flat = dl.Flatness(trace=float(np.trace(H)),
                           spectral_norm=float(np.abs(np.linalg.eigvalsh(H)).max()),
                           frobenius_norm=float(np.linalg.norm(H)))
        assert flat.chain_holds(M=m)


def test_minibatch_single_point_dataset_is_exact():
    model = dl.make_quadratic_network(2, 1, dataset_size=1, noise_mode="dataset",
                                      noise_scale=5.0, seed=2)
    rng = np.random.default_rng(0)
    w = np.array([0.7])
    g = dl.minibatch_gradient(model, 0, w, 3, rng)
    assert np.abs(g - model.grad(0, w)).max() <= 1e-12
    moments = dl.estimate_noise_moments(model, 0, w, 1, 100, rng)
    assert np.abs(moments["mean"]).max() == 0.0
    assert np.abs(moments["covariance"]).max() == 0.0


def test_noise_zero_mean_and_batch_scaling():
    model = dl.make_quadratic_network(2, 2, dataset_size=64, noise_mode="dataset",
                                      noise_scale=1.5, seed=7)
    rng = np.random.default_rng(123)
    m1 = dl.estimate_noise_moments(model, 0, np.zeros(2), 1, 100_000, rng)
    assert np.all(np.abs(m1["mean"]) <= 4.0 * m1["mean_stderr"])
    m4 = dl.estimate_noise_moments(model, 0, np.zeros(2), 4, 100_000, rng)
    ratio = np.trace(m1["covariance"]) / np.trace(m4["covariance"])
    assert abs(ratio - 4.0) <= 0.4


def test_enumerated_covariance_matches_empirical():
    model = dl.make_quadratic_network(2, 2, dataset_size=48, noise_mode="dataset",
                                      noise_scale=1.0, seed=8)
    info = dl.minimizer_summary(model)
    rng = np.random.default_rng(5)
    reps = 100_000
    est = dl.estimate_noise_moments(model, 1, info.w_star, 1, reps, rng)
    exact = info.R_s_blocks[1]
    # five standard errors; covariance-entry stderr approximated by
    # sqrt(second moments / reps)
    diag = np.sqrt(np.diag(exact))
    scale = np.outer(diag, diag) + np.abs(exact)
    stderr = scale / np.sqrt(reps)
    assert np.all(np.abs(est["covariance"] - exact) <= 5.0 * stderr)


def test_double_well_hand_values():
    model = dl.make_double_well_network(2, [0.5, -0.5], dataset_size=16,
                                        noise_scale=0.4, seed=4)
    info = dl.minimizer_summary(model)
    assert np.allclose(info.w_star, 1.0, atol=1e-12)
    assert np.allclose(info.d.ravel(), [0.5, -0.5], atol=1e-12)
    assert abs(info.barrier - 1.0) <= 1e-12
    assert info.basin == (0.0, np.inf)
    assert np.allclose(info.H_k_star, 8.0, atol=1e-9)
    assert info.epsilon <= 1e-12
    assert abs(info.H_bar[0, 0] - 8.0) <= 1e-9


def test_double_well_minus_side():
    model = dl.make_double_well_network(2, [0.0, 0.0], dataset_size=8, seed=1)
    info = dl.minimizer_summary(model, which="minus")
    assert np.allclose(info.w_star, -1.0, atol=1e-12)
    assert info.basin == (-np.inf, 0.0)


def test_double_well_global_eval():
    model = dl.make_double_well_network(3, [0.2, 0.1, -0.3], dataset_size=8, seed=2)
    out = dl.global_eval(model, [0.0])
    assert abs(out["J"] - 1.0) <= 1e-14
    assert abs(out["grad"][0]) <= 1e-14  # tilts cancel in the aggregate


def test_double_well_datasets_centered_exactly():
    model = dl.make_double_well_network(4, [0.1, -0.1, 0.2, -0.2],
                                        dataset_size=33, noise_scale=2.0, seed=6)
    assert np.abs(model.datasets.mean(axis=1)).max() <= 1e-14


def test_tilts_must_sum_to_zero():
    with pytest.raises(ModelError):
        dl.make_double_well_network(2, [0.5, -0.4])


def test_rejects_bad_specs():
    with pytest.raises(ModelError):
        dl.make_quadratic_network(0, 2)
    with pytest.raises(ModelError):
        dl.make_quadratic_network(2, 3, noise_mode="dataset", dataset_size=2)
    with pytest.raises(ModelError):
        dl.QuadraticNetwork(H=-np.eye(2)[None].repeat(2, 0),
                            w_loc=np.zeros((2, 2)), noise_mode="additive",
                            R_blocks=np.repeat(np.eye(2)[None], 2, 0))
    with pytest.raises(ModelError):
        dl.estimate_noise_moments(
            dl.make_quadratic_network(1, 1, seed=0), 0, [0.0], 1, 1,
            np.random.default_rng(0))
