"""Diffusion update internals: normalization, schedule, score, reverse ODE."""

import numpy as np
import pytest
from scipy.special import logsumexp

from diffusim.diffusion import (
    AffineNormalizer,
    DiffusionConfig,
    ScoreField,
    diffusion_update,
    fit_normalizer,
    reverse_sample,
    sigma_schedule,
    transform_observation,
)
from diffusim.dynamics import ThirdCoordinateObservation
from diffusim.errors import SolverError
from diffusim.ssm import PairedEnsemble, RngStream, StateEnsemble


def make_config(**kwargs):
    base = dict(sigma_x=0.1, sigma_y=0.25)
    base.update(kwargs)
    return DiffusionConfig(**base)


# ---------------------------------------------------------------------------
# normalization


def test_normalizer_two_point_column():
    norm = AffineNormalizer.fit(np.array([[-1.0], [3.0]]))
    np.testing.assert_allclose(norm.shift, [1.0])
    np.testing.assert_allclose(norm.scale, [2.0])
    np.testing.assert_allclose(norm.apply(np.array([[-1.0], [3.0]])), [[-1.0], [1.0]])


def test_normalizer_constant_column():
    norm = AffineNormalizer.fit(np.array([[5.0], [5.0], [5.0]]))
    np.testing.assert_allclose(norm.shift, [5.0])
    np.testing.assert_allclose(norm.scale, [1.0])
    np.testing.assert_allclose(norm.apply(np.full((3, 1), 5.0)), np.zeros((3, 1)))


def test_normalizer_bounds_and_centering():
    data = np.random.default_rng(0).normal(size=(100, 3)) * [1.0, 10.0, 0.1]
    norm = AffineNormalizer.fit(data)
    z = norm.apply(data)
    assert np.all(np.abs(z) <= 1.0 + 1e-12)
    np.testing.assert_allclose(z.mean(axis=0), np.zeros(3), atol=1e-12)


def test_normalizer_round_trip():
    data = np.random.default_rng(1).normal(size=(50, 4))
    norm = AffineNormalizer.fit(data)
    np.testing.assert_allclose(norm.invert(norm.apply(data)), data, atol=1e-12)


def test_fit_normalizer_separates_blocks():
    paired = PairedEnsemble(np.random.default_rng(2).normal(size=(30, 3)),
                            np.random.default_rng(3).normal(size=(30, 1)) * 100.0)
    norm_x, norm_y = fit_normalizer(paired)
    assert norm_x.shift.shape == (3,)
    assert norm_y.shift.shape == (1,)


def test_transform_observation():
    norm_y = AffineNormalizer(np.array([0.0]), np.array([2.0]))
    np.testing.assert_allclose(transform_observation(norm_y, np.array([4.0])), [2.0])
    fitted = AffineNormalizer.fit(np.array([[1.0], [3.0]]))
    np.testing.assert_allclose(transform_observation(fitted, np.array([2.0])), [0.0])
    with pytest.raises(ValueError):
        transform_observation(norm_y, np.array([1.0, 2.0]))


# ---------------------------------------------------------------------------
# schedule


def test_schedule_endpoints():
    assert sigma_schedule(0.0, 5.0) == (0.0, 0.0)
    assert sigma_schedule(1.0, 5.0) == (5.0, 25.0)


def test_schedule_half_gamma_is_derivative_of_variance():
    h = 1e-4
    t = 0.5
    _, half_gamma = sigma_schedule(t, 5.0)
    var = lambda s: sigma_schedule(s, 5.0)[0] ** 2
    fd = (var(t + h) - var(t - h)) / (4 * h)
    assert half_gamma == pytest.approx(fd, abs=1e-6)


def test_schedule_domain():
    with pytest.raises(ValueError):
        sigma_schedule(-0.1, 5.0)
    with pytest.raises(ValueError):
        sigma_schedule(1.1, 5.0)


def test_smoothed_scale_identity():
    field = ScoreField(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros(1), make_config())
    for t in np.linspace(0.0, 1.0, 11):
        sigma, _ = sigma_schedule(t, field.config.sigma_max)
        assert abs(field.sigma_bar(t) ** 2 - sigma**2 - 0.1**2) <= 1e-12


# ---------------------------------------------------------------------------
# score field


def oracle_log_density(field, x, t):
    """Direct log of the smoothed conditional mixture, summed term by term."""
    cfg = field.config
    sigma, _ = sigma_schedule(t, cfg.sigma_max)
    sbar_sq = sigma**2 + cfg.sigma_x**2
    d = field.dim
    terms = []
    for xi, yi in zip(field.states, field.observations):
        obs_log = (-0.5 * field.y_hat.size * np.log(2 * np.pi * cfg.sigma_y**2)
                   - np.sum((field.y_hat - yi) ** 2) / (2 * cfg.sigma_y**2))
        state_log = (-0.5 * d * np.log(2 * np.pi * sbar_sq)
                     - np.sum((x - xi) ** 2) / (2 * sbar_sq))
        terms.append(obs_log + state_log)
    return logsumexp(terms)


def test_score_single_pair_closed_form():
    config = make_config()
    field = ScoreField(np.array([[0.4, -0.2]]), np.array([[0.1]]), np.array([0.7]), config)
    x = np.array([0.1, 0.3])
    t = 0.6
    sbar_sq = (t * config.sigma_max) ** 2 + config.sigma_x**2
    np.testing.assert_allclose(field.score(x, t), (field.states[0] - x) / sbar_sq, rtol=1e-12)
    np.testing.assert_allclose(field.weights(x, t), [1.0])


def test_score_vanishes_by_symmetry():
    a = np.array([0.5, -0.3])
    field = ScoreField(np.stack([a, -a]), np.zeros((2, 1)), np.array([0.2]), make_config())
    np.testing.assert_allclose(field.score(np.zeros(2), 0.5), np.zeros(2), atol=1e-14)


def test_weights_form_a_distribution():
    rng = np.random.default_rng(7)
    field = ScoreField(rng.normal(size=(25, 3)), rng.normal(size=(25, 2)),
                       rng.normal(size=2), make_config())
    w = field.weights(rng.normal(size=3), 0.3)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12


def test_score_matches_finite_differences_of_log_density():
    rng = np.random.default_rng(8)
    h = 1e-5
    for _ in range(10):
        n = int(rng.integers(2, 21))
        d = int(rng.integers(1, 4))
        obs_dim = int(rng.integers(1, 3))
        field = ScoreField(rng.normal(size=(n, d)), rng.normal(size=(n, obs_dim)),
                           rng.normal(size=obs_dim), make_config())
        x = rng.normal(size=d)
        t = float(rng.uniform(0.05, 1.0))
        score = field.score(x, t)
        for j in range(d):
            step = np.zeros(d)
            step[j] = h
            fd = (oracle_log_density(field, x + step, t)
                  - oracle_log_density(field, x - step, t)) / (2 * h)
            assert score[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_score_batch_matches_single_queries():
    rng = np.random.default_rng(9)
    field = ScoreField(rng.normal(size=(15, 3)), rng.normal(size=(15, 1)),
                       rng.normal(size=1), make_config())
    queries = rng.normal(size=(8, 3))
    batch = field.score_batch(queries, 0.4)
    np.testing.assert_allclose(batch, [field.score(q, 0.4) for q in queries], rtol=1e-12)


def test_score_is_exchangeable_over_pair_order():
    rng = np.random.default_rng(10)
    states = rng.normal(size=(12, 2))
    obs = rng.normal(size=(12, 1))
    y_hat = rng.normal(size=1)
    perm = rng.permutation(12)
    a = ScoreField(states, obs, y_hat, make_config())
    b = ScoreField(states[perm], obs[perm], y_hat, make_config())
    queries = rng.normal(size=(5, 2))
    np.testing.assert_allclose(a.score_batch(queries, 0.7), b.score_batch(queries, 0.7),
                               rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------------------
# reverse sampler


def test_single_atom_sampler_contracts_to_the_atom():
    c = 0.1
    config = make_config(sigma_x=0.05, sigma_y=0.05)
    field = ScoreField(np.array([[c]]), np.array([[0.0]]), np.array([0.0]), config)
    out, counts = reverse_sample(field, 2000, RngStream(21))
    samples = out.members[:, 0]
    assert abs(samples.mean() - c) < 3 * 0.05 / np.sqrt(2000)
    assert np.all(counts > 0)


def test_single_atom_terminal_matches_analytic_map():
    # with one atom the score is linear and the reverse ODE solves to
    # x(1) = c + (x(0) - c) * sigma_x / sqrt(sigma_max^2 + sigma_x^2)
    c = 0.3
    config = make_config(sigma_x=0.05, sigma_y=0.05, ode_rtol=1e-8, ode_atol=1e-10)
    field = ScoreField(np.array([[c]]), np.array([[0.0]]), np.array([0.0]), config)
    z0 = RngStream(22).generator().normal(0.0, config.sigma_max, size=(200, 1))
    out, _ = reverse_sample(field, 200, RngStream(22))
    shrink = 0.05 / np.sqrt(config.sigma_max**2 + 0.05**2)
    expected = c + (z0 - c) * shrink
    np.testing.assert_allclose(out.members, expected, atol=1e-5)


def test_prior_recovery_with_uninformative_observation():
    # enormous sigma_y flattens the observation weights, so the sampler
    # draws from the smoothed prior: cov = atom covariance + sigma_x^2 I
    rng = np.random.default_rng(23)
    atoms = rng.normal(size=(400, 2)) * 0.4
    config = make_config(sigma_x=0.1, sigma_y=1e6)
    field = ScoreField(atoms, rng.normal(size=(400, 1)), np.array([0.3]), config)
    out, _ = reverse_sample(field, 5000, RngStream(24))
    target_mean = atoms.mean(axis=0)
    target_cov = np.cov(atoms.T, ddof=0) + 0.1**2 * np.eye(2)
    np.testing.assert_allclose(out.members.mean(axis=0), target_mean, atol=0.05)
    # entry-wise: relative on the O(0.2) diagonal, absolute on the tiny off-diagonal
    np.testing.assert_allclose(np.cov(out.members.T), target_cov, rtol=0.15, atol=0.01)


def test_shared_and_per_member_controllers_agree_statistically():
    rng = np.random.default_rng(25)
    atoms = rng.normal(size=(50, 2))
    shared = ScoreField(atoms, rng.normal(size=(50, 1)), np.zeros(1), make_config())
    per = ScoreField(atoms, rng.normal(size=(50, 1)), np.zeros(1),
                     make_config(controller="per_member"))
    out_s, counts_s = reverse_sample(shared, 64, RngStream(26))
    out_p, counts_p = reverse_sample(per, 64, RngStream(26))
    assert counts_s.shape == counts_p.shape == (64,)
    assert len(np.unique(counts_s)) == 1  # one controller, one count
    np.testing.assert_allclose(out_s.members.mean(axis=0), out_p.members.mean(axis=0), atol=0.25)


def test_max_steps_budget_enforced():
    field = ScoreField(np.array([[0.0]]), np.array([[0.0]]), np.zeros(1),
                       make_config(max_steps=1))
    with pytest.raises(SolverError, match="max_steps"):
        reverse_sample(field, 4, RngStream(27))


# ---------------------------------------------------------------------------
# the full update


def test_update_concentrates_on_the_observed_member():
    # members have well separated third coordinates; a sharp sensor plus a
    # narrow observation bandwidth pins the posterior to the matching member
    members = np.zeros((5, 3))
    members[:, 2] = np.arange(5.0) * 4.0
    members[:, 0] = np.arange(5.0)
    prior = StateEnsemble(members, step_index=1)
    obs_model = ThirdCoordinateObservation(variance=1e-8)
    config = make_config(sigma_x=0.05, sigma_y=0.02)
    posterior, counts = diffusion_update(prior, obs_model, np.array([8.0]), config, RngStream(30))
    assert posterior.step_index == 1
    assert counts.shape == (5,)
    np.testing.assert_allclose(posterior.mean()[2], 8.0, atol=0.5)
    np.testing.assert_allclose(posterior.mean()[0], 2.0, atol=0.5)


def test_update_replays_bit_identically():
    rng = np.random.default_rng(31)
    prior = StateEnsemble(rng.normal(size=(40, 3)), step_index=2)
    obs_model = ThirdCoordinateObservation(variance=0.25)
    a, _ = diffusion_update(prior, obs_model, np.array([0.4]), make_config(), RngStream(5, (1,)))
    b, _ = diffusion_update(prior, obs_model, np.array([0.4]), make_config(), RngStream(5, (1,)))
    np.testing.assert_array_equal(a.members, b.members)


def test_config_validation():
    with pytest.raises(ValueError):
        make_config(sigma_x=0.0)
    with pytest.raises(ValueError):
        make_config(sigma_max=0.5)
    with pytest.raises(ValueError):
        make_config(controller="fancy")
    with pytest.raises(ValueError):
        make_config(max_steps=0)
