import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from twistwave.disorder import make_coupling_law, make_profile, sample_twist
from twistwave.operators_1d import (
    assemble_1d,
    count_below,
    count_tridiagonal,
    critical_epsilon,
    effective_potential,
    free_count_1d,
    from_potential,
    ids_1d,
    laplacian_1d,
    overlap_decomposition,
    single_cell_ground_energy,
    superposition_inequality_check,
)

T_SQUARE_48 = 0.38244775723349284  # unit square, h = 1/48
# sign change of the single-cell energy found by an independent vertex-centred
# Neumann discretization (2048 intervals) scanned at step 1e-5
EPS0_BRACKET = (0.00647, 0.00648)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**31 - 1))
def test_sturm_count_equals_dense(n, seed):
    rng = np.random.default_rng(seed)
    d, e = rng.normal(size=n) * 4, rng.normal(size=n - 1)
    ev = la.eigvalsh_tridiagonal(d, e)
    E = np.sort(np.concatenate([rng.uniform(-15, 15, 10), (ev[:-1] + ev[1:]) / 2]))
    np.testing.assert_array_equal(count_tridiagonal(d, e, E), np.searchsorted(ev, E))


def test_exact_eigenvalue_not_counted():
    # pivot at exactly zero is nudged positive: the eigenvalue at E is not below E
    d = np.array([2.0, 2.0])
    e = np.array([-1.0])
    assert count_tridiagonal(d, e, np.array([1.0]))[0] == 0
    assert count_tridiagonal(d, e, np.array([1.0 + 1e-12]))[0] == 1


def test_free_count_matches_sturm():
    for bc in ("dirichlet", "neumann"):
        op = from_potential(np.zeros(300), 0.1, bc)
        E = np.linspace(-1, 50, 200)
        np.testing.assert_array_equal(count_below(op, E), free_count_1d(300, 0.1, E, bc))


def test_laplacian_neumann_row_sums_vanish():
    d, e = laplacian_1d(10, 0.5, "neumann")
    L = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
    np.testing.assert_allclose(L.sum(axis=1), 0.0, atol=1e-12)


def test_assembly_potential():
    prof = make_profile("bump", amplitude=1.0, half_cells=1)
    law = make_coupling_law("uniform", lo=-1.0, hi=1.0)
    f = sample_twist(prof, law, 10.0, 0.1, seed=3)
    op = assemble_1d(f, 0.5, 0.2)
    V = effective_potential(f, 0.5, 0.2)
    np.testing.assert_allclose(V, 0.25 * f.gamma**2 - 0.2 * f.gamma_dot**2)
    np.testing.assert_allclose(op.diag, 2 / 0.01 + V)


def test_single_cell_zero_level_exactly_zero():
    prof = make_profile("bump", amplitude=1.0, half_cells=0)
    for eps in np.linspace(-2, 2, 9):
        assert single_cell_ground_energy(prof, 0.0, eps, T_SQUARE_48) == 0.0


def test_single_cell_plus_nonincreasing():
    prof = make_profile("bump", amplitude=1.0, half_cells=0)
    vals = [single_cell_ground_energy(prof, 1.0, e, T_SQUARE_48) for e in np.linspace(-2, 2, 41)]
    assert np.all(np.diff(vals) <= 0)


def test_critical_epsilon_against_scan_oracle():
    prof = make_profile("bump", amplitude=1.0, half_cells=0)
    law = make_coupling_law("two_point", v0=0.0, v1=1.0, prob=0.5)
    crit = critical_epsilon(prof, law, T_SQUARE_48)
    assert crit.mode == "single"
    lo, hi = EPS0_BRACKET
    assert lo - 2e-5 < crit.value < hi + 2e-5
    e0 = crit.value
    assert single_cell_ground_energy(prof, 1.0, e0 - 1e-3, T_SQUARE_48) > 0
    assert single_cell_ground_energy(prof, 1.0, e0 + 1e-3, T_SQUARE_48) < 0


def test_overlap_mode_symmetric_shifts():
    prof = make_profile("bump", amplitude=1.0, half_cells=1)
    law = make_coupling_law("two_point", v0=0.0, v1=1.0, prob=0.5)
    dec = overlap_decomposition(prof)
    assert list(dec.J1) == [-1, 0, 1]
    crit = critical_epsilon(prof, law, T_SQUARE_48)
    assert crit.mode == "overlap"
    assert crit.per_shift[-1] == pytest.approx(crit.per_shift[1], rel=1e-6)
    assert crit.value == min(crit.per_shift.values())


def test_critical_epsilon_needs_positive_energy():
    prof = make_profile("bump", amplitude=1.0, half_cells=0)
    law = make_coupling_law("two_point", v0=0.0, v1=1.0, prob=0.5)
    with pytest.raises(ValueError, match="not positive"):
        critical_epsilon(prof, law, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 3), st.integers(0, 2**31 - 1))
def test_superposition_property(n, seed):
    rng = np.random.default_rng(seed)
    pots = [rng.normal(scale=10, size=40) for _ in range(n)]
    assert superposition_inequality_check(pots, 0.1, np.linspace(-30, 80, 60)).holds


def test_ids_1d_independent_of_workers():
    prof = make_profile("bump", amplitude=1.0, half_cells=0)
    law = make_coupling_law("two_point", v0=0.0, v1=1.0, prob=0.5)
    E = np.linspace(0.05, 2, 8)
    a = ids_1d(prof, law, 0.4, 0.0, 40.0, 0.1, E, 6, seed=5, workers=1)
    b = ids_1d(prof, law, 0.4, 0.0, 40.0, 0.1, E, 6, seed=5, workers=2)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert a.csv_text() == b.csv_text()


def test_ids_1d_rejects_zero_reps():
    prof = make_profile("bump", amplitude=1.0)
    law = make_coupling_law("two_point", v0=0.0, v1=1.0, prob=0.5)
    with pytest.raises(ValueError):
        ids_1d(prof, law, 0.4, 0.0, 10.0, 0.1, [1.0], 0, seed=1)
