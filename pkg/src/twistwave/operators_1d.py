"""One-dimensional comparison operators and exact eigenvalue counting."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import eigvalsh_tridiagonal

from .curves import IdsCurve
from .disorder import CouplingLaw, SingleSiteProfile, TwistField, sample_twist

BOUNDARY_CONDITIONS = ("dirichlet", "neumann")


@dataclass(frozen=True)
class Tridiagonal1D:
    """Symmetric tridiagonal matrix for ``-d^2/ds^2 + V`` on a uniform grid."""

    diag: np.ndarray
    offdiag: np.ndarray
    h_s: float
    bc: str
    ell: float

    @property
    def size(self):
        return self.diag.size

    def dense(self):
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)

    def eigenvalues(self):
        return eigvalsh_tridiagonal(self.diag, self.offdiag)

    def gershgorin(self):
        radius = np.zeros(self.size)
        radius[:-1] += np.abs(self.offdiag)
        radius[1:] += np.abs(self.offdiag)
        return float(np.min(self.diag - radius)), float(np.max(self.diag + radius))


def laplacian_1d(n, h, bc="dirichlet"):
    """Diagonal and off-diagonal of the 3-point ``-d^2/ds^2`` on n nodes."""
    if bc not in BOUNDARY_CONDITIONS:
        raise ValueError(f"unknown boundary condition {bc!r}")
    diag = np.full(n, 2.0 / h**2)
    if bc == "neumann":
        # mirror ghost across the cell face: u_{-1} = u_0
        diag[0] = diag[-1] = 1.0 / h**2
        if n == 1:
            diag[0] = 0.0
    return diag, np.full(n - 1, -1.0 / h**2)


def effective_potential(field: TwistField, T, eps):
    return T**2 * field.gamma**2 - eps * field.gamma_dot**2


def assemble_1d(field: TwistField, T, eps, bc="dirichlet") -> Tridiagonal1D:
    """Discretize ``-d^2/ds^2 + T^2 gamma^2 - eps gamma_dot^2`` on the field grid."""
    n = field.n
    if field.gamma.shape != (n,) or field.gamma_dot.shape != (n,):
        raise ValueError("twist samples do not match the field grid")
    if abs(n * field.h_s - field.ell) > 1e-9 * field.ell:
        raise ValueError("field grid does not cover (-ell/2, ell/2)")
    diag, off = laplacian_1d(n, field.h_s, bc)
    return Tridiagonal1D(diag + effective_potential(field, T, eps), off, field.h_s, bc, field.ell)


def from_potential(potential, h_s, bc="dirichlet"):
    potential = np.asarray(potential, dtype=float)
    diag, off = laplacian_1d(potential.size, h_s, bc)
    return Tridiagonal1D(diag + potential, off, h_s, bc, potential.size * h_s)


# -- Sturm counting -------------------------------------------------------------


@njit(cache=True)
def _sturm_counts(diag, off2, energies, pivmin):
    n = diag.size
    out = np.zeros(energies.size, dtype=np.int64)
    for k in range(energies.size):
        E = energies[k]
        d = diag[0] - E
        if abs(d) < pivmin:
            d = pivmin
        count = 1 if d < 0 else 0
        for i in range(1, n):
            d = diag[i] - E - off2[i - 1] / d
            if abs(d) < pivmin:
                d = pivmin
            if d < 0:
                count += 1
        out[k] = count
    return out


def pivot_floor(diag, offdiag, h_s=None):
    scale = max(1.0, float(np.max(np.abs(diag))) if diag.size else 1.0)
    if offdiag.size:
        scale = max(scale, float(np.max(np.abs(offdiag))))
    if h_s is not None:
        scale = max(scale, h_s**-2)
    return 1e-3 * np.finfo(float).eps * scale


def count_tridiagonal(diag, offdiag, energies, h_s=None):
    """Eigenvalues strictly below each energy, from the LDL^T inertia.

    A vanishing pivot is replaced by a tiny positive one, so an eigenvalue
    sitting exactly at ``E`` is not counted.
    """
    diag = np.ascontiguousarray(diag, dtype=float)
    offdiag = np.ascontiguousarray(offdiag, dtype=float)
    scalar = np.ndim(energies) == 0
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    counts = _sturm_counts(diag, offdiag**2, np.ascontiguousarray(energies), pivot_floor(diag, offdiag, h_s))
    return int(counts[0]) if scalar else counts


def count_below(op: Tridiagonal1D, E):
    return count_tridiagonal(op.diag, op.offdiag, E, op.h_s)


def free_lowest_dirichlet(ell, h_s):
    return 4.0 / h_s**2 * np.sin(np.pi * h_s / (2.0 * (ell + h_s))) ** 2


def free_count_1d(n, h_s, energies, bc="dirichlet"):
    """Exact count for the free 3-point Laplacian (closed-form spectrum)."""
    energies = np.asarray(energies, dtype=float)
    j = np.arange(n)
    if bc == "dirichlet":
        lam = 4.0 / h_s**2 * np.sin(np.pi * (j + 1) / (2.0 * (n + 1))) ** 2
    else:
        lam = 4.0 / h_s**2 * np.sin(np.pi * j / (2.0 * n)) ** 2
    return np.searchsorted(lam, energies, side="left")


# -- ensemble IDS ---------------------------------------------------------------


def _realization_counts(args):
    profile, law, T, eps, ell, h_s, energies, seed, rep, bc, tail_tol = args
    field = sample_twist(profile, law, ell, h_s, seed, rep=rep, tail_tol=tail_tol)
    return count_below(assemble_1d(field, T, eps, bc), energies)


def ids_1d(profile: SingleSiteProfile, law: CouplingLaw, T, eps, ell, h_s, E_grid, reps, seed,
           bc="dirichlet", workers=1, tail_tol=1e-6) -> IdsCurve:
    """Ensemble estimate of the counting function per unit length.

    Realization ``r`` uses the stream ``(seed, r)``, so the result does not
    depend on ``workers``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    energies = np.asarray(E_grid, dtype=float)
    if np.any(np.diff(energies) < 0):
        raise ValueError("E_grid must be sorted")
    jobs = [(profile, law, T, eps, ell, h_s, energies, seed, r, bc, tail_tol) for r in range(reps)]
    workers = min(int(workers or 1), reps, os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            counts = list(pool.map(_realization_counts, jobs))
    else:
        counts = [_realization_counts(job) for job in jobs]
    meta = dict(h_s=h_s, eps=eps, seed=seed, T=T, bc=bc, profile=profile.to_dict(), law=law.to_dict())
    return IdsCurve(energies, np.array(counts), ell, meta)


# -- single-cell problems -------------------------------------------------------


@dataclass(frozen=True)
class OverlapDecomposition:
    p: int
    beta: float
    J: tuple
    J1: tuple
    J2: tuple

    @property
    def n1(self):
        return len(self.J1)

    @property
    def n2(self):
        return len(self.J2)


def _cell_samples(h):
    n = int(round(1.0 / h))
    return (np.arange(n) + 0.5) * (1.0 / n) - 0.5


def overlap_decomposition(profile: SingleSiteProfile, samples=4096) -> OverlapDecomposition:
    if not profile.compact:
        raise ValueError("overlap decomposition needs a compactly supported profile")
    p = profile.half_cells
    J = tuple(range(-p, p + 1))
    s = np.linspace(-0.5, 0.5, samples + 1)
    J1 = tuple(j for j in J if np.any(profile.w(s + j) != 0))
    J2 = tuple(j for j in J if np.any(profile.wdot(s + j) != 0))
    return OverlapDecomposition(p, profile.beta, J, J1, J2)


def cell_potential(profile: SingleSiteProfile, T, eps, shift=0, n2=1, h=1 / 512):
    s = _cell_samples(h)
    return T**2 * profile.w(s + shift) ** 2 - n2 * eps * profile.wdot(s + shift) ** 2


def single_cell_ground_energy(profile: SingleSiteProfile, coupling_level, eps, T, multiplier=1, shift=0,
                              n2=1, h=1 / 512):
    """Lowest Neumann eigenvalue on (-1/2, 1/2) of ``-d^2 + n * level * v``."""
    pot = multiplier * coupling_level * cell_potential(profile, T, eps, shift, n2, h)
    if not np.any(pot):
        return 0.0  # constants are exact null vectors
    diag, off = laplacian_1d(pot.size, 1.0 / pot.size, "neumann")
    return float(eigvalsh_tridiagonal(diag + pot, off, select="i", select_range=(0, 0))[0])


@dataclass(frozen=True)
class CriticalEpsilon:
    value: float
    mode: str
    per_shift: dict
    decomposition: OverlapDecomposition | None

    def to_dict(self):
        out = {"eps0": self.value, "mode": self.mode,
               "per_shift": {str(k): v for k, v in self.per_shift.items()}}
        if self.decomposition is not None:
            d = self.decomposition
            out.update(J1=list(d.J1), J2=list(d.J2), n1=d.n1, n2=d.n2)
        return out


def _threshold(energy, tol, eps_cap):
    if energy(0.0) <= 0:
        raise ValueError(
            "single-cell ground energy is not positive at eps = 0; this happens when the "
            "coupling constant vanishes or the profile is trivial"
        )
    lo, hi = 0.0, 1.0
    while energy(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > eps_cap:
            return float("inf")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if energy(mid) > 0 else (lo, mid)
    return 0.5 * (lo + hi)


def critical_epsilon(profile: SingleSiteProfile, law: CouplingLaw, T, mode=None, tol=1e-5, h=1 / 512,
                     eps_cap=1e12) -> CriticalEpsilon:
    """Largest eps keeping the upper single-cell energy positive.

    ``single`` uses the profile on one cell (support width at most 1);
    ``overlap`` takes the minimum over the shifted cells with ``n1``, ``n2``
    multiplicities. The result is accurate to ``tol``.
    """
    if mode is None:
        mode = "single" if profile.compact and profile.beta <= 1 else "overlap"
    level = law.lambda_tilde_plus
    if mode == "single":
        if not (profile.compact and profile.beta <= 1):
            raise ValueError("single mode needs a profile supported in a unit cell")
        val = _threshold(lambda e: single_cell_ground_energy(profile, level, e, T, h=h), tol, eps_cap)
        return CriticalEpsilon(val, mode, {0: val}, None)
    if mode != "overlap":
        raise ValueError(f"unknown mode {mode!r}")
    dec = overlap_decomposition(profile)
    per = {}
    for j in dec.J1:
        per[j] = _threshold(
            lambda e, j=j: single_cell_ground_energy(profile, level, e, T, dec.n1, j, dec.n2, h), tol, eps_cap
        )
    return CriticalEpsilon(min(per.values()), mode, per, dec)


# -- superposition inequality ---------------------------------------------------


@dataclass
class SuperpositionReport:
    energies: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    n: int

    @property
    def violations(self):
        bad = np.nonzero(self.lhs > self.rhs)[0]
        return [(float(self.energies[i]), int(self.lhs[i]), int(self.rhs[i])) for i in bad]

    @property
    def holds(self):
        return not self.violations

    def to_dict(self):
        return {"n": self.n, "holds": self.holds, "violations": self.violations,
                "lhs": self.lhs.tolist(), "rhs": self.rhs.tolist(), "energies": self.energies.tolist()}


def superposition_inequality_check(potentials, h_s, E_grid, n=None, bc="dirichlet") -> SuperpositionReport:
    """Compare count(h0 + sum V_j) with sum_j count(h0 + n V_j) on a grid of energies."""
    pots = [np.asarray(v, dtype=float) for v in potentials]
    if not pots or any(v.shape != pots[0].shape for v in pots):
        raise ValueError("potentials must share one grid")
    n = len(pots) if n is None else int(n)
    energies = np.asarray(E_grid, dtype=float)
    lhs = count_below(from_potential(np.sum(pots, axis=0), h_s, bc), energies)
    rhs = sum(count_below(from_potential(n * v, h_s, bc), energies) for v in pots)
    return SuperpositionReport(energies, lhs, rhs, n)
