import numpy as np
import pytest

import driftlab as dl
from driftlab import moment_oracle
from driftlab.exceptions import NonConvergenceError
from driftlab.theory import TheoryInputs


def scalar_single_agent(h=2.0, r=1.0):
    return dl.QuadraticNetwork(H=np.array([[[h]]]), w_loc=np.zeros((1, 1)),
                               noise_mode="additive",
                               R_blocks=np.array([[[r]]]))


def hetero_common_hessian(K=4, M=2, seed=6):
    return dl.make_quadratic_network(K, M, hessian_mode="common",
                                     minimizer_spread=1.0,
                                     noise_mode="additive", noise_scale=1.0,
                                     seed=seed)


def test_one_step_moments_match_direct_formula():
    model = hetero_common_hessian()
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("ring", K=4)
    mu, B = 0.05, 2
    for alg in dl.ALGORITHMS:
        series = moment_oracle.propagate(info, cm, alg, mu, B, 0)
        A1, A2 = dl.dynamics.algorithm_matrices(alg, cm.A)
        A2s = np.kron(A2.T, np.eye(2))
        mean_direct = mu * (A2s @ info.d_stacked)
        R = np.zeros((8, 8))
        for k in range(4):
            R[2 * k:2 * k + 2, 2 * k:2 * k + 2] = info.R_s_blocks[k] / B
        cov_direct = mu * mu * A2s @ R @ A2s.T
        assert np.abs(series.final.mean - mean_direct).max() <= 1e-14
        assert np.abs(series.final.cov - cov_direct).max() <= 1e-14


def test_zero_drift_zero_noise_is_zero():
    model = dl.QuadraticNetwork(H=np.full((3, 1, 1), 2.0),
                                w_loc=np.zeros((3, 1)), noise_mode="additive",
                                R_blocks=np.zeros((3, 1, 1)))
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("ring", K=3)
    series = moment_oracle.propagate(info, cm, "diffusion", 0.05, 1, 50)
    assert np.abs(series.er).max() == 0.0


def test_scalar_closed_form_series():
    h, r, mu, B = 2.0, 1.5, 0.01, 2
    model = scalar_single_agent(h, r)
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("centralized", K=1)
    n_max = 120
    series = moment_oracle.propagate(info, cm, "centralized", mu, B, n_max)
    j = np.arange(n_max + 1)
    powers = (1.0 - mu * h) ** (2 * j)
    closed = (h / 2) * mu * mu * (r / B) * np.cumsum(powers)
    assert np.abs(series.er - closed).max() <= 1e-15
    # matches (mu/B) e(n) to O(mu) relative error: within 1% at mu = 0.01
    sd = dl.spectral_decompose(cm)
    inputs = TheoryInputs(H_bar=np.array([[h]]), R_bar_s=np.array([[r]]),
                          d=np.zeros((1, 1)), spectral=sd, mu=mu, B=B)
    theory = mu / B * dl.e_n(inputs, j)
    rel = np.abs(theory - series.er) / series.er
    assert rel.max() <= 0.01


def test_scalar_steady_state_fixed_point():
    h, r, mu, B = 2.0, 1.5, 0.01, 2
    model = scalar_single_agent(h, r)
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("centralized", K=1)
    er_inf = moment_oracle.steady_state(info, cm, "centralized", mu, B)
    # the covariance fixed point is iterated to a 1e-13 Frobenius change,
    # leaving a truncation of about tol / (1 - rho^2)
    floor = 1e-13 / (1.0 - (1.0 - mu * h) ** 2)
    cov_inf = mu * mu * (r / B) / (1.0 - (1.0 - mu * h) ** 2)
    assert abs(er_inf - (h / 2) * cov_inf) <= 2 * floor
    closed_form = mu * r / (4 * B) / (1.0 - mu * h / 2)
    assert abs(er_inf - closed_form) <= 2 * floor
    assert abs(er_inf - closed_form) / closed_form <= 1e-8


def test_homogeneous_steady_mean_is_zero():
    model = dl.make_quadratic_network(3, 2, minimizer_spread=0.0,
                                      noise_mode="additive", seed=2)
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("ring", K=3)
    system = moment_oracle._build_system(info, cm, "consensus", 0.02, 1)
    mean = np.linalg.solve(np.eye(6) - system.C, system.drive)
    assert np.abs(mean).max() <= 1e-12


def test_steady_state_ordering_heterogeneous():
    model = hetero_common_hessian(seed=9)
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("ring", K=4)
    mu, B = 0.01, 50
    vals = {alg: moment_oracle.steady_state(info, cm, alg, mu, B)
            for alg in dl.ALGORITHMS}
    assert vals["centralized"] <= vals["diffusion"] <= vals["consensus"]


def test_monotone_geometric_approach():
    model = hetero_common_hessian(seed=4)
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("ring", K=4)
    mu, B = 0.05, 4
    series = moment_oracle.propagate(info, cm, "diffusion", mu, B, 400)
    er_inf = moment_oracle.steady_state(info, cm, "diffusion", mu, B)
    gaps = np.abs(series.er - er_inf)
    # analyze the decay above the fixed-point truncation floor (~1e-13)
    tail = gaps[50:]
    tail = tail[tail > 1e-11]
    assert tail.size >= 20
    assert np.all(np.diff(tail) <= 1e-14)
    rho_sq = series.spectral_radius ** 2
    ratio = tail[1:] / tail[:-1]
    assert np.all(ratio <= rho_sq + 1e-6)


def test_covariance_stays_symmetric_psd():
    model = hetero_common_hessian(seed=5)
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("ring", K=4)
    for n_max in (1, 10, 100):
        series = moment_oracle.propagate(info, cm, "consensus", 0.05, 1, n_max)
        cov = series.final.cov
        assert np.abs(cov - cov.T).max() <= 1e-12
        assert np.linalg.eigvalsh(cov).min() >= -1e-10


def test_non_contractive_warns_and_steady_fails():
    model = scalar_single_agent(h=2.0)
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("centralized", K=1)
    with pytest.warns(UserWarning):
        moment_oracle.propagate(info, cm, "centralized", 1.5, 1, 3)
    with pytest.raises(NonConvergenceError):
        moment_oracle.steady_state(info, cm, "centralized", 1.5, 1)


def test_gaussian_init_covariance_conventions():
    model = hetero_common_hessian(seed=11)
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("ring", K=4)
    cfg = dl.RunConfig(mu=0.05, B=1, n_steps=40, seed=77,
                       init_kind="gaussian", init_sigma=0.2)
    for alg in dl.ALGORITHMS:
        stats = dl.ensemble_excess_risk(model, info, cm, alg, cfg, reps=20_000)
        series = moment_oracle.propagate(info, cm, alg, cfg.mu, cfg.B, 39,
                                         init_kind="gaussian", init_sigma=0.2)
        z = np.abs(stats.er_mean - series.er) / stats.er_stderr
        assert z.max() <= 5.0
