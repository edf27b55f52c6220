import numpy as np
import pytest

from twistwave.analysis import lowest_eigenvalue
from twistwave.cross_section import CrossSection, solve_transverse
from twistwave.disorder import make_coupling_law, make_profile, sample_twist
from twistwave.operators_1d import free_lowest_dirichlet
from twistwave.operators_3d import (
    BlockCholesky,
    BudgetExceeded,
    assemble_3d,
    count_below_3d,
    count_curve_3d,
    ids_3d,
)
from twistwave.verify import _form_by_loops, random_3d_instance

ZERO = make_coupling_law("two_point", v0=0.0, v1=0.0, prob=0.5)
UNIFORM = make_coupling_law("uniform", lo=-1.0, hi=1.0)


@pytest.fixture(scope="module")
def small():
    rng = np.random.default_rng(12)
    cs, spec, field = random_3d_instance(rng, 1200)
    return cs, spec, field, assemble_3d(cs, field, spec)


def test_matrix_symmetric(small):
    A = small[3].matrix
    assert abs(A - A.T).max() == 0


def test_form_matches_loops(small):
    _, spec, field, op = small
    u = np.random.default_rng(0).normal(size=op.dof)
    assert u @ (op.matrix @ u) == pytest.approx(_form_by_loops(spec, field, u), rel=1e-12)


@pytest.mark.parametrize("engine", ["block", "sparse"])
def test_inertia_matches_dense(small, engine):
    op = small[3]
    ev = np.linalg.eigvalsh(op.matrix.toarray())
    E = (ev[[0, 5, 40, 200]] + ev[[1, 6, 41, 201]]) / 2
    got = [count_below_3d(op, e, engine=engine).count for e in E]
    assert got == np.searchsorted(ev, E).tolist()


def test_spectral_counts_certified(small):
    op = small[3]
    ev = np.linalg.eigvalsh(op.matrix.toarray())
    E = np.linspace(ev[0] - 1, ev[60], 7)
    counts, meta = count_curve_3d(op, E, method="spectral")
    np.testing.assert_array_equal(counts, np.searchsorted(ev, E))
    assert meta["certified_by_inertia"]


def test_spectrum_above_mu1(small):
    _, spec, _, op = small
    assert np.linalg.eigvalsh(op.matrix.toarray())[0] >= spec.mu1 - 1e-10


def test_straight_tube_separates():
    cs = CrossSection.rectangle(1.0, 1.0, resolution=1 / 18)
    spec = solve_transverse(cs)
    field = sample_twist(make_profile("bump", amplitude=1.0), ZERO, 4.0, 0.25, seed=0)
    op = assemble_3d(cs, field, spec)
    assert lowest_eigenvalue(op) == pytest.approx(spec.mu1 + free_lowest_dirichlet(4.0, 0.25), rel=1e-10)
    sep = assemble_3d(cs, field, spec, max_nnz=10)
    assert sep.separable and sep.matrix is None
    E = spec.mu1 + np.array([1.0, 20.0, 80.0])
    assert [count_below_3d(sep, e).count for e in E] == [count_below_3d(op, e).count for e in E]


def test_budget_for_twisted_tube():
    cs = CrossSection.rectangle(1.0, 1.0, resolution=1 / 18)
    field = sample_twist(make_profile("bump", amplitude=1.0), UNIFORM, 4.0, 0.25, seed=0)
    with pytest.raises(BudgetExceeded):
        assemble_3d(cs, field, max_nnz=10)


def test_block_cholesky_solves(small):
    _, spec, _, op = small
    sigma = spec.mu1 - 1.0
    fac = BlockCholesky(op, sigma)
    b = np.random.default_rng(1).normal(size=op.dof)
    x = fac.solve(b)
    r = op.matrix @ x - sigma * x - b
    assert np.linalg.norm(r) < 1e-9 * np.linalg.norm(b)
    with pytest.raises(np.linalg.LinAlgError):
        BlockCholesky(op, spec.mu1 + 50.0)


def test_ids_3d_deterministic_and_worker_free():
    cs = CrossSection.rectangle(1.0, 1.0, resolution=1 / 17)
    prof = make_profile("bump", amplitude=2.0)
    E = np.linspace(0.5, 3.0, 4)
    a = ids_3d(cs, prof, UNIFORM, 4.0, 0.25, E, 3, seed=2, workers=1)
    b = ids_3d(cs, prof, UNIFORM, 4.0, 0.25, E, 3, seed=2, workers=2)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert np.all(np.diff(a.counts, axis=1) >= 0)
    with pytest.raises(ValueError):
        ids_3d(cs, prof, UNIFORM, 4.0, 0.25, E, 0, seed=2)
