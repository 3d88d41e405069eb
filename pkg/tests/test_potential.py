"""Cumulant generating function, Legendre transform, tilted sampling.

The Gaussian reference density makes everything explicit: rho(lam) =
lam^2/2, h(x) = x^2/2, the lam-tilt is a unit-variance normal shifted to
mean lam.  Those closed forms anchor the oracle values; the quartic
potential exercises the same code where no closed form exists, checked
through identities that hold for any potential.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad

import gllab
from gllab import (EnvelopeTable, Potential, QuadratureSpec,
                   QuadratureDiverged, RootNotBracketed,
                   TiltedFamilySampler, quartic_potential)


def test_gaussian_log_mgf_matches_half_lambda_squared(gaussian):
    assert gaussian.log_mgf(0.0) == pytest.approx(0.0, abs=1e-12)
    assert gaussian.log_mgf(1.0) == pytest.approx(0.5, abs=1e-10)
    assert gaussian.log_mgf(-2.0) == pytest.approx(2.0, abs=1e-10)
    lams = np.linspace(-3.0, 3.0, 13)
    assert np.allclose(gaussian.log_mgf(lams), lams ** 2 / 2, atol=1e-9)


def test_gaussian_normalization_offset_is_zero(gaussian):
    # phi already contains the log(2 pi)/2 constant
    assert abs(gaussian.normalization_offset) < 1e-10


def test_gaussian_legendre_closed_form(gaussian):
    h, lam = gaussian.legendre_h(2.0)
    assert h == pytest.approx(2.0, abs=1e-9)
    assert lam == pytest.approx(2.0, abs=1e-9)
    h, lam = gaussian.legendre_h(1.0)
    assert h == pytest.approx(0.5, abs=1e-9)


def test_gaussian_legendre_grid_and_duality(gaussian):
    xs = np.linspace(-3.0, 3.0, 121)
    h, lam = gaussian.legendre_h_vec(xs)
    assert np.max(np.abs(h - xs ** 2 / 2)) < 1e-8
    # duality residual with rho evaluated through the separate mgf path
    residual = np.abs(h + gaussian.log_mgf(lam) - lam * xs)
    assert np.max(residual) < 1e-8


def test_tilted_entropy_identity(gaussian):
    # lam * rho'(lam) - rho(lam) equals h evaluated at the tilted mean;
    # at lam = 1 the Gaussian value is 1/2
    for lam in (0.25, 1.0, -1.7):
        rho, mean, _ = gaussian._tilted_stats(lam)
        h, _ = gaussian.legendre_h(mean)
        assert lam * mean - rho == pytest.approx(h, abs=1e-9)
    rho, mean, _ = gaussian._tilted_stats(1.0)
    assert mean - rho == pytest.approx(0.5, abs=1e-9)


def test_tilted_stats_gaussian_mean_and_variance(gaussian):
    lams = np.linspace(-2.0, 2.0, 9)
    _, mean, var = gaussian._tilted_stats(lams)
    assert np.allclose(mean, lams, atol=1e-9)
    assert np.allclose(var, 1.0, atol=1e-8)


def test_cumulants_bundle_consistency(quartic):
    cg = quartic.cumulants()
    lam = 0.8
    eps = 1e-4
    # finite differences of rho agree with the analytic tilted moments
    d1 = (cg.rho(lam + eps) - cg.rho(lam - eps)) / (2 * eps)
    d2 = (cg.rho(lam + eps) - 2 * cg.rho(lam) + cg.rho(lam - eps)) / eps ** 2
    assert d1 == pytest.approx(cg.rho_prime(lam), abs=1e-6)
    assert d2 == pytest.approx(cg.rho_double_prime(lam), rel=1e-4)


def test_quartic_normalized_and_symmetric(quartic):
    assert abs(quartic.log_mgf(0.0)) < 1e-10
    xs = np.linspace(0.1, 1.5, 7)
    hp, _ = quartic.legendre_h_vec(xs)
    hm, _ = quartic.legendre_h_vec(-xs)
    assert np.allclose(hp, hm, atol=1e-9)


def test_quartic_against_direct_quadrature(quartic):
    # independent oracle: scipy adaptive quadrature of the tilted moments
    z = quad(lambda x: math.exp(-(x ** 4 / 4 + x ** 2 / 2)),
             -np.inf, np.inf)[0]
    lam = 1.3
    mgf = quad(lambda x: math.exp(lam * x - (x ** 4 / 4 + x ** 2 / 2)),
               -np.inf, np.inf)[0] / z
    assert quartic.log_mgf(lam) == pytest.approx(math.log(mgf), abs=1e-8)


def test_legendre_h_convex_and_minimized_at_mean(quartic):
    xs = np.linspace(-1.2, 1.2, 41)
    h, _ = quartic.legendre_h_vec(xs)
    d2 = np.diff(h, 2)
    assert np.all(d2 > -1e-10)
    assert h[20] == pytest.approx(0.0, abs=1e-9)   # x = 0 is the rest mean


def test_unattainable_mean_raises(gaussian):
    with pytest.raises(RootNotBracketed):
        gaussian.legendre_h(100.0)


def test_heavy_tilt_of_slowly_decaying_potential_raises():
    # smooth potential with exponential tails: tilting past the decay
    # rate leaves unbounded mass outside any quadrature window
    pot = Potential(
        phi=lambda x: np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2),
        phi_prime=lambda x: x / np.sqrt(1.0 + np.asarray(x) ** 2),
        phi_double_prime=lambda x: (1.0 + np.asarray(x) ** 2) ** -1.5,
        quadrature=QuadratureSpec(node_count=8192, domain_halfwidth=42.0),
        name="exp_tail")
    assert math.isfinite(pot.log_mgf(0.4))
    with pytest.raises(QuadratureDiverged):
        pot.log_mgf(2.0)


def test_kinked_potential_fails_doubling_check():
    # |x| breaks the smoothness the trapezoid accuracy check relies on
    with pytest.raises(QuadratureDiverged):
        Potential(
            phi=lambda x: np.abs(x) + math.log(2.0),
            phi_prime=lambda x: np.sign(x),
            phi_double_prime=lambda x: np.zeros_like(
                np.asarray(x, dtype=float)),
            name="kinked")


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(node_count=8)
    with pytest.raises(ValueError):
        quartic_potential(-1.0)
    with pytest.raises(ValueError):
        quartic_potential(0.0, 0.0)


def test_sample_tilted_moments(gaussian, rng):
    draws = gaussian.sample_tilted(0.7, rng, size=40000)
    se = 1.0 / math.sqrt(40000)
    assert abs(draws.mean() - 0.7) < 5 * se
    assert abs(draws.var() - 1.0) < 6 * se


def test_family_sampler_matches_per_tilt_sampler(gaussian, rng):
    fam = TiltedFamilySampler(gaussian, -1.0, 1.0)
    lams = np.asarray([-0.8, -0.25, 0.0, 0.4, 0.95])
    lam_full = np.repeat(lams, 20000)
    draws = fam.sample(lam_full, rng).reshape(lams.size, -1)
    se = 1.0 / math.sqrt(20000)
    for row, lam in zip(draws, lams):
        assert abs(row.mean() - lam) < 5 * se
        assert abs(row.var() - 1.0) < 6 * se


def test_envelope_table_matches_newton_solve(gaussian, quartic):
    for pot in (gaussian, quartic):
        table = EnvelopeTable(pot, -1.5, 1.5)
        # node values carry full Newton accuracy ...
        _, exact_nodes = pot.legendre_h_vec(table._xs[::64])
        assert np.max(np.abs(table(table._xs[::64]) - exact_nodes)) < 1e-9
        # ... off-node queries add only the piecewise-linear interp error
        xs = np.linspace(-1.4, 1.4, 313)
        _, exact = pot.legendre_h_vec(xs)
        assert np.max(np.abs(table(xs) - exact)) < 1e-5


def test_envelope_table_grows_its_range(gaussian):
    table = EnvelopeTable(gaussian, -0.5, 0.5)
    out = table(np.asarray([2.5]))     # escapes, triggers a rebuild
    assert out[0] == pytest.approx(2.5, abs=1e-8)
    assert table.hi >= 2.5
    assert not table.range_escaped


def test_envelope_table_clamps_when_unresolvable(gaussian):
    table = EnvelopeTable(gaussian, -0.5, 0.5)
    with pytest.warns(UserWarning):
        table(np.asarray([500.0]))     # beyond any attainable tilt
    assert table.range_escaped


def test_max_curvature_gaussian_is_one(gaussian):
    table = EnvelopeTable(gaussian, -1.0, 1.0)
    assert table.max_curvature() == pytest.approx(1.0, rel=1e-6)


def test_local_equilibrium_average_gaussian(gaussian):
    # phi'(y) = y; with a generous cutoff the clipped-flux average at
    # mean x is x itself, and a tight cutoff saturates it
    for x in (0.0, 0.5, -1.2):
        assert gaussian.local_equilibrium_average(x, 30.0) == \
            pytest.approx(x, abs=1e-6)
    assert abs(gaussian.local_equilibrium_average(1.0, 0.01)) <= 0.01
    with pytest.raises(ValueError):
        gaussian.local_equilibrium_average(0.0, -1.0)


def test_make_potential_names():
    assert gllab.make_potential("gaussian").name == "gaussian"
    assert gllab.make_potential("quartic", a=2.0, b=0.5).name == "quartic"
    with pytest.raises(ValueError):
        gllab.make_potential("unknown")
