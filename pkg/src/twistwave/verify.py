"""Built-in property suites: exact oracles and inequalities, no config needed."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy import integrate, optimize, special

from .analysis import lifshits_fit, lowest_eigenvalue
from .cross_section import CrossSection, solve_transverse
from .disorder import make_coupling_law, make_profile, sample_twist
from .operators_1d import (
    assemble_1d,
    count_below,
    count_tridiagonal,
    critical_epsilon,
    free_count_1d,
    free_lowest_dirichlet,
    from_potential,
    single_cell_ground_energy,
    superposition_inequality_check,
)
from .operators_3d import _separable_count, assemble_3d, count_below_3d

SUITES = ("oracles", "inequalities")


@dataclass
class CaseResult:
    suite: str
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}/{self.name}: {self.detail}"


# -- random instances -----------------------------------------------------------


def random_tridiagonal(rng, n):
    return rng.normal(size=n) * 3, rng.normal(size=n - 1)


def random_3d_instance(rng, max_dof=4000):
    """A small twisted tube with a strong random twist, at most ``max_dof`` unknowns."""
    kind = rng.choice(["rectangle", "disc", "ellipse", "l_shape"])
    if kind == "rectangle":
        height = rng.uniform(0.6, 1.4)
        cs = CrossSection.rectangle(1.0, height, resolution=min(1.0, height) / 18)
    elif kind == "disc":
        cs = CrossSection.disc(0.6, resolution=1.2 / 18)
    elif kind == "ellipse":
        cs = CrossSection.ellipse(0.7, 0.45, resolution=0.9 / 18)
    else:
        cs = CrossSection.l_shape(1.0, 0.5, resolution=1 / 20)
    spec = solve_transverse(cs)
    h_s = 0.25
    n_s = max(2, min(12, max_dof // spec.grid.size))
    ell = n_s * h_s
    profile = make_profile("bump", amplitude=float(rng.uniform(0.5, 4.0)), half_cells=int(rng.integers(0, 2)))
    law = make_coupling_law("uniform", lo=-1.0, hi=1.0)
    field = sample_twist(profile, law, ell, h_s, seed=int(rng.integers(2**31)))
    return cs, spec, field


# -- oracle cases ---------------------------------------------------------------


def case_sturm_dense(count=100, n=50, seed=0):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        d, e = random_tridiagonal(rng, n)
        ev = la.eigvalsh_tridiagonal(d, e)
        E = np.sort(np.concatenate([rng.uniform(ev[0] - 1, ev[-1] + 1, 20), (ev[:-1] + ev[1:]) / 2]))
        got = count_tridiagonal(d, e, E)
        want = np.searchsorted(ev, E, side="left")
        bad += int(np.any(got != want))
    return bad == 0, f"{count - bad}/{count} random tridiagonals (n = {n}) match dense counts exactly"


def case_inertia_dense_3d(count=20, max_dof=4000, seed=1):
    rng = np.random.default_rng(seed)
    bad, sizes = 0, []
    for _ in range(count):
        cs, spec, field = random_3d_instance(rng, max_dof)
        op = assemble_3d(cs, field, spec)
        ev = np.linalg.eigvalsh(op.matrix.toarray())
        sizes.append(op.dof)
        # energies between eigenvalues, away from ties
        mids = (ev[:-1] + ev[1:]) / 2
        E = np.sort(rng.choice(mids[ev[1:] - ev[:-1] > 1e-8 * max(1, abs(ev[-1]))], 8, replace=False))
        for engine in ("block", "sparse"):
            got = np.array([count_below_3d(op, e, engine=engine).count for e in E])
            bad += int(np.any(got != np.searchsorted(ev, E)))
    return bad == 0, f"{count} instances ({min(sizes)}-{max(sizes)} dof), block and sparse engines, {bad} mismatches"


def _form_by_loops(spec, field, u):
    """Quadratic form evaluated slice by slice, edge by edge."""
    grid = spec.grid
    h, h_s = grid.h, field.h_s
    n_t, n = grid.size, field.n
    U = u.reshape(n, n_t)
    total = 0.0
    for k in range(n):
        v = U[k]
        for d in (0, 2):  # +x1, +x2 lattice edges
            nb = grid.neighbors[d]
            inner = nb >= 0
            total += np.sum((v[inner] - v[nb[inner]]) ** 2) / h**2
        for d in range(4):
            total += np.sum(v[grid.neighbors[d] < 0] ** 2) / h**2
    G = grid.dtau()
    w = grid.quadrature_weights
    zero = np.zeros(n_t)
    for e in range(n + 1):
        lo = U[e - 1] if e > 0 else zero
        hi = U[e] if e < n else zero
        m = field.gamma_mid[e] * (G @ (0.5 * (lo + hi)))
        m[:n_t] += (hi - lo) / h_s
        total += np.sum(w * m**2)
    return total


def case_form_oracle(count=3, seed=2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        cs, spec, field = random_3d_instance(rng, 1500)
        op = assemble_3d(cs, field, spec)
        u = rng.normal(size=op.dof)
        a = float(u @ (op.matrix @ u))
        b = _form_by_loops(spec, field, u)
        worst = max(worst, abs(a - b) / abs(b))
    return worst < 1e-12, f"matrix form vs slice/edge loops, worst relative difference {worst:.2e}"


def case_symmetry(seed=3):
    rng = np.random.default_rng(seed)
    cs, spec, field = random_3d_instance(rng, 2000)
    A = assemble_3d(cs, field, spec).matrix
    asym = abs(A - A.T).max()
    G = spec.grid.dtau()
    n_t = spec.grid.size
    # interior rows use central differences away from the boundary ring: antisymmetric block
    block = G[:n_t, :].toarray()
    anti = np.abs(block + block.T).max() * spec.grid.h
    lap = spec.grid.laplacian()
    lap_asym = abs(lap - lap.T).max()
    ok = asym == 0 and lap_asym == 0 and anti < 1e-12
    return ok, f"|A - A^T| = {asym:.1e}, |L - L^T| = {lap_asym:.1e}, h |G + G^T| = {anti:.1e}"


def case_square_exact(h=1 / 24):
    spec = solve_transverse(CrossSection.rectangle(1.0, 1.0, resolution=h), 3)
    # modes (1,1), (1,2), (2,1) of the five-point stencil with nodes on the boundary
    s1, s2 = np.sin(np.pi * h / 2) ** 2, np.sin(np.pi * h) ** 2
    exact = 4.0 / h**2 * np.array([2 * s1, s1 + s2, s1 + s2])
    err = np.max(np.abs(spec.mu - exact) / exact)
    return err < 1e-10, f"unit square, h = 1/{round(1 / h)}: discrete modes match closed form to {err:.1e}"


def bessel_j01():
    return optimize.brentq(special.j0, 2.0, 3.0, xtol=1e-15)


def case_disc_richardson():
    ref = bessel_j01() ** 2
    mu = [solve_transverse(CrossSection.disc(1.0, resolution=2 / n)).mu1 for n in (40, 80)]
    extrap = 2 * mu[1] - mu[0]  # staircase error is first order
    rel = abs(extrap - ref) / ref
    ok = rel < 0.01 and abs(mu[1] - ref) < abs(mu[0] - ref)
    return ok, f"unit disc mu1 {mu[0]:.4f}, {mu[1]:.4f}, extrapolated {extrap:.4f} vs j01^2 {ref:.4f} ({rel:.2%})"


def rectangle_coupling_exact(a, b):
    """||d_tau phi_1|| for the a x b rectangle, by adaptive quadrature of the closed form."""
    c = 2 / math.sqrt(a * b)

    def f(y, x):
        px = -c * math.pi / a * math.sin(math.pi * x / a) * math.cos(math.pi * y / b)
        py = -c * math.pi / b * math.cos(math.pi * x / a) * math.sin(math.pi * y / b)
        return (x * py - y * px) ** 2

    val = integrate.dblquad(f, -a / 2, a / 2, -b / 2, b / 2, epsabs=1e-13, epsrel=1e-12)[0]
    return math.sqrt(val)


def case_coupling_rectangle(h=1 / 24):
    exact = rectangle_coupling_exact(1.0, 2.0)
    T = solve_transverse(CrossSection.rectangle(1.0, 2.0, resolution=h)).coupling_T
    rel = abs(T - exact) / exact
    return rel < 1e-3, f"1 x 2 rectangle T_h = {T:.6f} vs quadrature {exact:.6f} ({rel:.1e})"


def case_kronecker():
    cs = CrossSection.rectangle(1.0, 1.0, resolution=1 / 24)
    spec = solve_transverse(cs)
    zero = make_coupling_law("two_point", v0=0.0, v1=0.0, prob=0.5)
    field = sample_twist(make_profile("bump", amplitude=1.0, half_cells=0), zero, 5.0, 0.25, seed=0)
    op = assemble_3d(cs, field, spec)
    lam = lowest_eigenvalue(op)
    want = spec.mu1 + free_lowest_dirichlet(5.0, 0.25)
    E = spec.mu1 + np.array([0.5, 3.0, 40.0, 60.0])
    inertia = [count_below_3d(op, e).count for e in E]
    sep = [_separable_count(op, e) for e in E]
    ok = abs(lam - want) < 1e-9 * want and inertia == sep
    return ok, f"straight tube bottom {lam:.12f} vs mu1 + free {want:.12f}; inertia {inertia} vs Kronecker {sep}"


def case_free_ids(ell=400.0, h_s=0.05):
    E = np.linspace(0.3, 3.0, 10)
    n = int(round(ell / h_s))
    nu = free_count_1d(n, h_s, E) / ell
    ref = np.sqrt(E) / np.pi
    rel = float(np.max(np.abs(nu - ref) / ref))
    zero = make_coupling_law("two_point", v0=0.0, v1=0.0, prob=0.5)
    field = sample_twist(make_profile("bump", amplitude=1.0, half_cells=0), zero, ell, h_s, seed=0)
    same = np.array_equal(count_below(assemble_1d(field, 1.0, 0.0), E), free_count_1d(n, h_s, E))
    return rel < 0.03 and same, f"free 1D count vs sqrt(E)/pi at ell = {ell:g}: {rel:.2%}; Sturm = closed form: {same}"


# -- inequality cases -----------------------------------------------------------


def case_superposition(seed=4):
    rng = np.random.default_rng(seed)
    h_s, m = 0.1, 60
    E = np.linspace(-20, 60, 81)
    fails = 0
    for n, count in ((2, 50), (3, 20)):
        for _ in range(count):
            pots = [rng.normal(scale=rng.uniform(1, 30), size=m) for _ in range(n)]
            fails += int(not superposition_inequality_check(pots, h_s, E).holds)
    return fails == 0, f"50 instances with n = 2 and 20 with n = 3 at 81 energies, {fails} violations"


def case_neumann_dirichlet(seed=5):
    rng = np.random.default_rng(seed)
    bad = 0
    E = np.linspace(-5, 50, 56)
    for _ in range(30):
        v = rng.normal(scale=5, size=80)
        dn = count_below(from_potential(v, 0.1, "dirichlet"), E)
        nn = count_below(from_potential(v, 0.1, "neumann"), E)
        bad += int(np.any(dn > nn))
    return bad == 0, f"Dirichlet count <= Neumann count on 30 random potentials, {bad} violations"


def case_nonneg_below_free(seed=6):
    rng = np.random.default_rng(seed)
    profile = make_profile("bump", amplitude=1.0, half_cells=1)
    law = make_coupling_law("uniform", lo=-1.0, hi=1.0)
    E = np.linspace(0.05, 5, 40)
    bad = 0
    for r in range(10):
        f = sample_twist(profile, law, 50.0, 0.05, seed=int(rng.integers(2**31)))
        bad += int(np.any(count_below(assemble_1d(f, 0.5, 0.0), E) > free_count_1d(f.n, 0.05, E)))
    return bad == 0, f"eps = 0 counts never exceed the free count (10 realizations), {bad} violations"


def case_single_cell(T=0.38245):
    profile = make_profile("bump", amplitude=1.0, half_cells=0)
    law = make_coupling_law("two_point", v0=0.0, v1=1.0, prob=0.5)
    eps = np.linspace(-2, 2, 41)
    minus = [single_cell_ground_energy(profile, law.lambda_tilde_minus, e, T) for e in eps]
    plus = np.array([single_cell_ground_energy(profile, law.lambda_tilde_plus, e, T) for e in eps])
    crit = critical_epsilon(profile, law, T)
    e0 = crit.value
    straddle = (single_cell_ground_energy(profile, law.lambda_tilde_plus, e0 - 1e-3, T) > 0
                and single_cell_ground_energy(profile, law.lambda_tilde_plus, e0 + 1e-3, T) < 0)
    zero = max(abs(m) for m in minus) == 0.0
    mono = bool(np.all(np.diff(plus) <= 0))
    ok = zero and mono and straddle
    return ok, f"E-(eps) = 0: {zero}; E+ non-increasing: {mono}; eps0 = {e0:.6f} straddles at +-1e-3: {straddle}"


def case_synthetic_fits():
    E = np.logspace(-3, 0, 61)
    out = []
    for kappa in (0.5, 1.0):
        fit = lifshits_fit(E, window=(E[0], E[-1]), sigma0=0.0, nu=np.exp(-E ** (-kappa)))
        out.append(abs(fit.kappa_hat - kappa))
    Ef = np.linspace(0.01, 3.0, 120)
    free = lifshits_fit(Ef, window=(0.05, 3.0), sigma0=0.0, nu=np.sqrt(Ef) / np.pi)
    ok = max(out) < 1e-3 and free.flag == "van_hove_like"
    return ok, f"kappa errors {out[0]:.1e}, {out[1]:.1e}; free curve flagged {free.flag}"


def case_bottom_bound(seed=7):
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(4):
        cs, spec, field = random_3d_instance(rng, 2500)
        worst = min(worst, lowest_eigenvalue(assemble_3d(cs, field, spec)) - spec.mu1)
    return worst >= -1e-10, f"min over instances of lambda_min - mu1^h = {worst:.3e}"


ORACLES = {
    "sturm_dense_1d": case_sturm_dense,
    "inertia_dense_3d": lambda: case_inertia_dense_3d(count=6, max_dof=1500),
    "form_oracle_3d": case_form_oracle,
    "symmetry": case_symmetry,
    "square_closed_form": case_square_exact,
    "disc_richardson": case_disc_richardson,
    "coupling_rectangle": case_coupling_rectangle,
    "kronecker_bottom": case_kronecker,
    "free_ids": case_free_ids,
}

INEQUALITIES = {
    "superposition": case_superposition,
    "neumann_vs_dirichlet": case_neumann_dirichlet,
    "eps0_below_free": case_nonneg_below_free,
    "single_cell": case_single_cell,
    "synthetic_fits": case_synthetic_fits,
    "bottom_bound": case_bottom_bound,
}


def run_suite(suite="all"):
    if suite not in SUITES + ("all",):
        raise ValueError(f"unknown suite {suite!r}")
    chosen = SUITES if suite == "all" else (suite,)
    results = []
    for name in chosen:
        cases = ORACLES if name == "oracles" else INEQUALITIES
        for case, fn in cases.items():
            try:
                ok, detail = fn()
            except Exception as exc:  # report, do not abort the suite
                ok, detail = False, f"raised {type(exc).__name__}: {exc}"
            results.append(CaseResult(name, case, bool(ok), detail))
    return results
