import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twistwave.cross_section import CrossSection, solve_transverse
from twistwave.disorder import (
    make_coupling_law,
    make_profile,
    realization_key,
    sample_twist,
    site_uniforms,
    tail_bound,
    thinness_constants,
    truncation_for,
)


def brute_force(profile, field, s):
    return sum(lam * profile.w(s - k) for k, lam in zip(field.sites, field.lambda_draws))


@settings(max_examples=20, deadline=None)
@given(st.integers(-5000, 5000), st.integers(0, 3000), st.integers(0, 2**31))
def test_site_uniforms_depend_only_on_site(k_lo, width, seed):
    key = realization_key(seed, 3)
    full = site_uniforms(key, k_lo, k_lo + width)
    mid = k_lo + width // 2
    part = site_uniforms(key, mid, k_lo + width)
    np.testing.assert_array_equal(full[mid - k_lo:], part)


def test_nested_boxes_bit_identical():
    profile = make_profile("bump", amplitude=1.0, half_cells=1)
    law = make_coupling_law("uniform", lo=-1.0, hi=1.0)
    small = sample_twist(profile, law, 10.0, 0.25, seed=4, rep=2)
    big = sample_twist(profile, law, 20.0, 0.25, seed=4, rep=2)
    idx = np.searchsorted(big.s, small.s)
    np.testing.assert_array_equal(big.s[idx], small.s)
    np.testing.assert_array_equal(big.gamma[idx], small.gamma)


def test_reps_are_independent_streams():
    profile = make_profile("bump", amplitude=1.0)
    law = make_coupling_law("uniform", lo=-1.0, hi=1.0)
    a = sample_twist(profile, law, 10.0, 0.25, seed=4, rep=0)
    b = sample_twist(profile, law, 10.0, 0.25, seed=4, rep=1)
    assert not np.array_equal(a.lambda_draws, b.lambda_draws)


def test_compact_field_matches_direct_sum():
    profile = make_profile("bump", amplitude=0.7, half_cells=2)
    law = make_coupling_law("uniform", lo=-1.0, hi=2.0)
    f = sample_twist(profile, law, 12.0, 0.1, seed=9)
    np.testing.assert_allclose(f.gamma, brute_force(profile, f, f.s), atol=1e-13)
    np.testing.assert_allclose(f.gamma_mid, brute_force(profile, f, f.s_mid), atol=1e-13)


def test_power_law_field_matches_direct_sum():
    profile = make_profile("power_law", amplitude=1.0, alpha=2.5)
    law = make_coupling_law("uniform", lo=0.0, hi=1.0)
    f = sample_twist(profile, law, 8.0, 0.25, seed=1, tail_tol=1e-3)
    np.testing.assert_allclose(f.gamma, brute_force(profile, f, f.s), atol=1e-10)
    assert f.tail_bound <= 1e-3


def test_gamma_dot_is_derivative():
    profile = make_profile("bump", amplitude=1.0, half_cells=1)
    law = make_coupling_law("uniform", lo=-1.0, hi=1.0)
    f = sample_twist(profile, law, 6.0, 0.001, seed=2)
    num = np.gradient(f.gamma, f.s)
    np.testing.assert_allclose(num[2:-2], f.gamma_dot[2:-2], atol=1e-4)


@settings(max_examples=15, deadline=None)
@given(st.floats(1.2, 4.0), st.floats(1e-6, 1e-1), st.floats(1.0, 200.0))
def test_truncation_meets_tolerance(alpha, tol, ell):
    profile = make_profile("power_law", amplitude=1.0, alpha=alpha)
    K = truncation_for(profile, 1.0, ell, tol)
    if np.isfinite(K):
        assert tail_bound(profile, 1.0, ell, K) <= tol
        if K > 0:
            assert tail_bound(profile, 1.0, ell, K - 1) > tol


def test_lattice_sum_power_law():
    profile = make_profile("power_law", amplitude=1.0, alpha=3.0)
    s = np.array([0.0, 0.3, 0.5])
    k = np.arange(-200000, 200001)
    brute = np.array([np.sum((1 + np.abs(x - k)) ** -3.0) for x in s])
    np.testing.assert_allclose(profile.lattice_sum(s), brute, rtol=1e-9)


def test_law_validation():
    with pytest.raises(ValueError, match="neighborhood of zero"):
        make_coupling_law("uniform", lo=0.5, hi=1.0)
    with pytest.raises(ValueError, match="neighborhood of zero"):
        make_coupling_law("two_point", v0=0.5, v1=1.0, prob=0.5)
    assert make_coupling_law("two_point", v0=0.0, v1=0.0, prob=0.5).degenerate
    with pytest.raises(ValueError):
        make_profile("power_law", alpha=1.0)
    with pytest.raises(ValueError):
        make_profile("bump", half_cells=0.5)


def test_two_point_frequencies():
    law = make_coupling_law("two_point", v0=0.0, v1=1.0, prob=0.3)
    draws = law.sample(200000, seed=0)
    assert set(np.unique(draws)) == {0.0, 1.0}
    assert abs(draws.mean() - 0.3) < 0.005


def test_thinness_constants_bump():
    spec = solve_transverse(CrossSection.rectangle(0.1, 0.1, resolution=0.1 / 17))
    profile = make_profile("bump", amplitude=0.3, half_cells=0)
    law = make_coupling_law("two_point", v0=0.0, v1=1.0, prob=0.5)
    rep = thinness_constants(profile, law, spec, delta0=0.03)
    # sup of the lattice sum of a single-cell bump is its amplitude
    assert rep.D1 == pytest.approx(5 * 0.3**2 + 1)
    assert rep.D2 is None and not rep.passes_d6
    factor = spec.radius_a**2 / (1 - spec.mu1 / spec.mu2)
    assert rep.lhs_d4 == pytest.approx(factor * rep.D1)
    assert rep.passes_d4 and rep.admissible_d4 == (rep.lhs_d4, 0.03)


def test_thinness_fails_for_fat_tube():
    spec = solve_transverse(CrossSection.rectangle(1.0, 1.0, resolution=1 / 20))
    rep = thinness_constants(make_profile("bump", amplitude=1.0), make_coupling_law("uniform", lo=-1, hi=1),
                             spec, delta0=0.03)
    assert not rep.passes_d4 and rep.admissible_d4 is None


@pytest.mark.parametrize("p", [0, 1, 3])
def test_bump_window_vanishes_with_derivative(p):
    prof = make_profile("bump", amplitude=2.0, half_cells=p)
    e = prof.beta / 2
    assert prof.w(np.array([-e, e])).tolist() == [0.0, 0.0]
    np.testing.assert_allclose(prof.wdot(np.array([-e, e])), 0.0, atol=1e-15)
    assert float(prof.w(0.0)) == 2.0
    s = np.linspace(-e - 0.5, e + 0.5, 40001)
    assert np.all(prof.w(s) >= 0)
    # continuous value and derivative: no jumps on a fine grid
    assert np.abs(np.diff(prof.w(s))).max() < 1e-3
    np.testing.assert_allclose(np.gradient(prof.w(s), s)[1:-1], prof.wdot(s)[1:-1], atol=1e-5)


def test_bump_support():
    prof = make_profile("bump", amplitude=1.0, half_cells=0)
    assert prof.beta == 1 and prof.compact
    assert float(prof.w(0.5 + 1e-9)) == 0.0 and float(prof.w(-0.6)) == 0.0


def test_power_law_profile_values():
    prof = make_profile("power_law", alpha=1.5, amplitude=2.0)
    assert float(prof.w(1.0)) == pytest.approx(2.0 * 2**-1.5)
    assert float(prof.wdot(1.0)) == pytest.approx(-1.5 * 2.0 * 2**-2.5)
