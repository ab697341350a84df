"""Isotropic Gaussian kernel: closed forms, gradients, convolution law."""

import numpy as np
import pytest
from scipy.integrate import quad

from diffusim.kernels import IsotropicGaussian, convolved_sigma


def direct_pdf(x, sigma):
    """Independent textbook evaluation used as the oracle throughout."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    norm = (2.0 * np.pi * sigma**2) ** (-d / 2.0)
    return norm * np.exp(-np.sum(x * x, axis=-1) / (2.0 * sigma**2))


def test_pdf_at_origin_is_normalizing_constant():
    assert IsotropicGaussian(1.0, 1).pdf(np.zeros(1)) == pytest.approx(1.0 / np.sqrt(2 * np.pi), rel=1e-12)
    assert IsotropicGaussian(2.0, 3).pdf(np.zeros(3)) == pytest.approx((2 * np.pi * 4.0) ** -1.5, rel=1e-12)


def test_pdf_matches_direct_formula():
    x = np.array([0.3, -0.4])
    assert IsotropicGaussian(0.5, 2).pdf(x) == pytest.approx(direct_pdf(x, 0.5), rel=1e-12)


def test_pdf_batched_rows_match_loop():
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(40, 3))
    kernel = IsotropicGaussian(0.8, 3)
    batch = kernel.pdf(xs)
    np.testing.assert_allclose(batch, [kernel.pdf(x) for x in xs], rtol=1e-13)


def test_log_pdf_closed_forms():
    kernel = IsotropicGaussian(1.0, 1)
    assert kernel.log_pdf(np.zeros(1)) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-14)
    # eval underflows to zero here; the log form must stay finite and exact
    assert kernel.log_pdf(np.array([40.0])) == pytest.approx(-800.0 - 0.5 * np.log(2 * np.pi), rel=1e-14)
    assert kernel.pdf(np.array([40.0])) == 0.0


def test_log_pdf_consistent_with_pdf():
    rng = np.random.default_rng(1)
    for _ in range(30):
        d = rng.integers(1, 5)
        sigma = float(rng.uniform(0.3, 3.0))
        x = rng.normal(scale=sigma, size=d)
        kernel = IsotropicGaussian(sigma, d)
        value = kernel.pdf(x)
        if value >= 1e-300:
            assert kernel.log_pdf(x) == pytest.approx(np.log(value), abs=1e-10)


def test_grad_zero_at_origin_and_closed_form():
    kernel = IsotropicGaussian(1.3, 2)
    np.testing.assert_array_equal(kernel.grad(np.zeros(2)), np.zeros(2))
    one = IsotropicGaussian(1.0, 2)
    x = np.array([1.0, 0.0])
    expected = np.array([-one.pdf(x), 0.0])
    np.testing.assert_allclose(one.grad(x), expected, rtol=1e-12)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-5
    for _ in range(20):
        d = rng.integers(1, 4)
        sigma = float(rng.uniform(0.5, 2.0))
        x = rng.normal(scale=sigma, size=d)
        kernel = IsotropicGaussian(sigma, d)
        grad = kernel.grad(x)
        for j in range(d):
            step = np.zeros(d)
            step[j] = h
            fd = (kernel.pdf(x + step) - kernel.pdf(x - step)) / (2 * h)
            assert grad[j] == pytest.approx(fd, rel=1e-6, abs=1e-12)


def test_pdf_integrates_to_one():
    # trapezoid over a +/-8 sigma box; Gaussian quadrature error is negligible
    for sigma, d in [(0.6, 1), (1.5, 2), (0.9, 3)]:
        n = 81
        axis = np.linspace(-8 * sigma, 8 * sigma, n)
        grids = np.meshgrid(*([axis] * d), indexing="ij")
        points = np.stack([g.ravel() for g in grids], axis=-1)
        values = IsotropicGaussian(sigma, d).pdf(points).reshape([n] * d)
        total = values
        for _ in range(d):
            total = np.trapezoid(total, axis, axis=0)
        assert total == pytest.approx(1.0, abs=1e-4)


def test_convolved_sigma_pythagorean():
    assert convolved_sigma(3.0, 4.0) == pytest.approx(5.0, rel=1e-15)


def test_convolved_sigma_delta_limit():
    sigma = 0.8
    assert convolved_sigma(sigma, 1e-9) == pytest.approx(sigma, rel=1e-12)


def test_convolved_sigma_rejects_nonpositive():
    with pytest.raises(ValueError):
        convolved_sigma(0.0, 1.0)
    with pytest.raises(ValueError):
        convolved_sigma(1.0, -0.1)


def test_convolution_law_by_quadrature():
    # integral of g_0.7(x - u) g_1.1(u) du equals g_sqrt(0.49+1.21)(x)
    a, b = 0.7, 1.1
    ga = IsotropicGaussian(a, 1)
    gb = IsotropicGaussian(b, 1)
    gc = IsotropicGaussian(convolved_sigma(a, b), 1)
    for x in (-2.0, -1.0, 0.0, 1.0, 2.0):
        value, _ = quad(
            lambda u: ga.pdf(np.array([x - u])) * gb.pdf(np.array([u])), -12.0, 12.0
        )
        assert value == pytest.approx(gc.pdf(np.array([x])), abs=1e-6)


def test_validation_errors():
    with pytest.raises(ValueError):
        IsotropicGaussian(0.0, 1)
    with pytest.raises(ValueError):
        IsotropicGaussian(1.0, 0)
    with pytest.raises(ValueError):
        IsotropicGaussian(1.0, 2).pdf(np.zeros(3))
