"""Straightened waveguide operator on a finite tube and exact eigenvalue counts."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.linalg import blas, lapack

from .cross_section import CrossSection, TransverseSpectrum, solve_transverse
from .curves import IdsCurve
from .disorder import CouplingLaw, SingleSiteProfile, TwistField, sample_twist
from .operators_1d import free_count_1d

DEFAULT_MAX_NNZ = 5_000_000
DENSE_TRANSVERSE_LIMIT = 6000
BLOCK_TRANSVERSE_LIMIT = 1024


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class SparseWaveguideOperator:
    """Matrix of the twisted form, ordered slice-major (index = k * n_t + i)."""

    matrix: sp.csc_matrix | None
    spectrum: TransverseSpectrum
    field: TwistField
    n_transverse: int
    n_slices: int
    separable: bool = False
    _transverse_eigs: np.ndarray | None = field(default=None, repr=False)
    _blocks: tuple | None = field(default=None, repr=False)

    @property
    def dof(self):
        return self.n_transverse * self.n_slices

    @property
    def h_t(self):
        return self.spectrum.grid.h

    @property
    def h_s(self):
        return self.field.h_s

    @property
    def ell(self):
        return self.field.ell

    @property
    def mu1(self):
        return self.spectrum.mu1

    def transverse_eigenvalues(self):
        if self._transverse_eigs is None:
            if self.n_transverse > DENSE_TRANSVERSE_LIMIT:
                raise BudgetExceeded("transverse grid too large for the full separable spectrum")
            lap = self.spectrum.grid.laplacian().toarray()
            self._transverse_eigs = np.linalg.eigvalsh(lap)
        return self._transverse_eigs

    def slice_blocks(self):
        """Diagonal and upper off-diagonal slice blocks (sparse)."""
        if self._blocks is None:
            A = self.matrix.tocsr()
            m = self.n_transverse
            diag = [A[k * m:(k + 1) * m, k * m:(k + 1) * m] for k in range(self.n_slices)]
            upper = [A[k * m:(k + 1) * m, (k + 1) * m:(k + 2) * m] for k in range(self.n_slices - 1)]
            self._blocks = (diag, upper)
        return self._blocks

    def to_triplets(self, path):
        """Debug export: one ``row,col,value`` line per stored entry."""
        if self.matrix is None:
            raise ValueError("separable operator was not assembled")
        coo = self.matrix.tocoo()
        data = np.column_stack([coo.row, coo.col, coo.data])
        np.savetxt(path, data, delimiter=",", header="row,col,value", comments="", fmt=["%d", "%d", "%.17g"])


def _longitudinal_maps(n, h_s):
    """Average and difference maps from n slices to the n + 1 slice edges (zero ghosts)."""
    rows = np.concatenate([np.arange(n), np.arange(1, n + 1)])
    cols = np.concatenate([np.arange(n), np.arange(n)])
    avg = sp.csr_matrix((np.full(2 * n, 0.5), (rows, cols)), shape=(n + 1, n))
    diff = sp.csr_matrix((np.concatenate([np.full(n, 1.0), np.full(n, -1.0)]) / h_s, (rows, cols)),
                         shape=(n + 1, n))
    return avg, diff


def edge_map(spectrum: TransverseSpectrum, field: TwistField):
    """Map from unknowns to the mixed-term samples ``gamma D_tau u_bar + D_3 u`` on every edge."""
    grid = spectrum.grid
    n_t = grid.size
    G = grid.dtau().tocsr()
    rows = G.shape[0]
    P = sp.eye(rows, n_t, format="csr")
    avg, diff = _longitudinal_maps(field.n, field.h_s)
    return (sp.kron(sp.diags(field.gamma_mid) @ avg, G) + sp.kron(diff, P)).tocsr()


def assemble_3d(cs: CrossSection, field: TwistField, spectrum: TransverseSpectrum | None = None,
                max_nnz=DEFAULT_MAX_NNZ, allow_separable=True) -> SparseWaveguideOperator:
    """Assemble the twisted Dirichlet form on the tube as a sparse matrix.

    The form is the cell sum of ``|D1 u|^2 + |D2 u|^2 + |gamma D_tau u_bar + D3 u|^2``
    divided by the cell volume, so the matrix is symmetric by construction.
    For an identically zero twist and a matrix over budget the operator is
    kept in factored (Kronecker) form and counted exactly from the
    separable spectrum.
    """
    if spectrum is None:
        spectrum = solve_transverse(cs)
    grid = spectrum.grid
    n_t, n = grid.size, field.n
    if field.gamma_mid.size != n + 1:
        raise ValueError("twist field edges do not match its grid")
    lap_t = grid.laplacian()
    G = grid.dtau()
    twisted = not field.is_zero()
    per_row = lap_t.nnz / n_t + 3 * (G.T @ G).nnz / n_t if twisted else lap_t.nnz / n_t + 2
    estimate = int(per_row * n_t * n)
    if estimate > max_nnz:
        if allow_separable and not twisted:
            return SparseWaveguideOperator(None, spectrum, field, n_t, n, separable=True)
        raise BudgetExceeded(f"about {estimate} nonzeros exceed the cap of {max_nnz}")
    weights = sp.diags(grid.quadrature_weights)
    avg, diff = _longitudinal_maps(n, field.h_s)
    if twisted:
        B = edge_map(spectrum, field)
        mixed = B.T @ sp.kron(sp.identity(n + 1), weights) @ B
    else:
        mixed = sp.kron(diff.T @ diff, sp.identity(n_t))
    A = (sp.kron(sp.identity(n), lap_t) + mixed).tocsc()
    # sparse products sum the (i, j) and (j, i) terms in different orders;
    # averaging with the transpose restores bitwise symmetry
    A = (0.5 * (A + A.T)).tocsc()
    A.sum_duplicates()
    A.sort_indices()
    return SparseWaveguideOperator(A, spectrum, field, n_t, n)


# -- inertia counts -------------------------------------------------------------


@dataclass
class CountResult:
    count: int
    energy: float
    perturbed: bool = False

    def __int__(self):
        return self.count


def _inertia(A, E):
    n = A.shape[0]
    shifted = (A - E * sp.identity(n, format="csc")).tocsc()
    try:
        lu = sla.splu(shifted, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                      options=dict(SymmetricMode=True))
    except RuntimeError:
        return None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None  # row pivoting broke the congruence
    d = lu.U.diagonal()
    if not np.all(np.isfinite(d)) or np.any(d == 0):
        return None
    return int(np.count_nonzero(d < 0))


def _block_inertia(op: SparseWaveguideOperator, E):
    """Negative count of ``A - E I`` by block LDL^T over the slices.

    The matrix is block tridiagonal (one block per slice), so the inertia is
    the sum of the inertias of the Schur complements
    ``D_k = A_kk - E - C_{k-1}^T D_{k-1}^{-1} C_{k-1}``. Positive definite
    pivots are factored by Cholesky, the rest by a symmetric eigensolve whose
    zero eigenvalues are nudged upward (an eigenvalue at E is not below E).
    """
    diag, upper = op.slice_blocks()
    m = op.n_transverse
    pivmin = 1e-3 * np.finfo(float).eps * max(1.0, float(abs(op.matrix).max()))
    neg = 0
    schur = None
    for k, block in enumerate(diag):
        D = block.toarray()
        D[np.diag_indices(m)] -= E
        if schur is not None:
            D -= schur
        C = upper[k].toarray() if k < len(upper) else None
        chol, info = lapack.dpotrf(D, lower=1, clean=1)
        if info == 0:
            if C is not None:
                Y, _ = lapack.dtrtrs(chol, C, lower=1)
                schur = blas.dsyrk(1.0, Y, trans=1, lower=0)
                schur = np.triu(schur) + np.triu(schur, 1).T
        else:
            w, Q = np.linalg.eigh(D)
            w[np.abs(w) < pivmin] = pivmin
            neg += int(np.count_nonzero(w < 0))
            if C is not None:
                Y = Q.T @ C
                schur = Y.T @ (Y / w[:, None])
    return neg


class BlockCholesky:
    """Block Cholesky factorization of a positive definite ``A - sigma I``.

    Stores per slice the Cholesky factor ``L_k`` of the Schur complement and
    ``Y_k = L_k^{-1} C_k``; raises ``np.linalg.LinAlgError`` if a pivot block
    is not positive definite (then sigma is not below the spectrum).
    """

    def __init__(self, op: SparseWaveguideOperator, sigma):
        diag, upper = op.slice_blocks()
        m = op.n_transverse
        self.m = m
        self.factors, self.couplings = [], []
        schur = None
        for k, block in enumerate(diag):
            D = block.toarray()
            D[np.diag_indices(m)] -= sigma
            if schur is not None:
                D -= schur
            chol, info = lapack.dpotrf(D, lower=1, clean=1)
            if info != 0:
                raise np.linalg.LinAlgError(f"pivot block {k} is not positive definite")
            self.factors.append(chol)
            if k < len(upper):
                Y, _ = lapack.dtrtrs(chol, upper[k].toarray(), lower=1)
                self.couplings.append(Y)
                schur = Y.T @ Y

    def solve(self, b):
        m, n = self.m, len(self.factors)
        b = np.asarray(b, dtype=float).reshape(n, m)
        z = np.empty_like(b)
        prev = None
        for k in range(n):
            rhs = b[k] if prev is None else b[k] - self.couplings[k - 1].T @ prev
            z[k], _ = lapack.dtrtrs(self.factors[k], rhs, lower=1)
            prev = z[k]
        x = np.empty_like(b)
        nxt = None
        for k in range(n - 1, -1, -1):
            rhs = z[k] if nxt is None else z[k] - self.couplings[k] @ nxt
            x[k], _ = lapack.dtrtrs(self.factors[k], rhs, lower=1, trans=1)
            nxt = x[k]
        return x.ravel()


def _separable_count(op: SparseWaveguideOperator, E):
    mu = op.transverse_eigenvalues()
    mu = mu[mu < E]
    return int(sum(free_count_1d(op.n_slices, op.h_s, E - m) for m in mu))


def count_below_3d(op: SparseWaveguideOperator, E, retries=3, engine="auto") -> CountResult:
    """Number of eigenvalues strictly below E from the inertia of ``A - E I``.

    ``sparse``: a symmetric sparse factorization without pivoting (fill
    reducing order) gives ``P (A - E I) P^T = L D L^T`` and the sign pattern of
    D; on breakdown the shift is nudged by a relative 1e-12 and the fact is
    recorded. ``block``: dense block LDL^T along the tube. ``auto`` uses the
    block form for transverse grids up to 1024 nodes.
    """
    E = float(E)
    if op.separable:
        return CountResult(_separable_count(op, E), E)
    if engine == "auto":
        engine = "block" if op.n_transverse <= BLOCK_TRANSVERSE_LIMIT else "sparse"
    if engine == "block":
        return CountResult(_block_inertia(op, E), E)
    if engine != "sparse":
        raise ValueError(f"unknown inertia engine {engine!r}")
    shift = E
    for attempt in range(retries + 1):
        c = _inertia(op.matrix, shift)
        if c is not None:
            return CountResult(c, shift, perturbed=attempt > 0)
        shift = shift * (1 + 1e-12) if shift != 0 else 1e-300
    raise RuntimeError(f"inertia factorization failed near E = {E}")


def count_curve_3d(op: SparseWaveguideOperator, energies, method="auto", guard=1e-7):
    """Counts at every energy; returns (counts, metadata).

    ``inertia`` factors once per energy. ``spectral`` computes the low
    eigenvalues with one shift-invert solve and certifies the result by an
    inertia count at the largest energy and at every energy closer than
    ``guard`` (relative) to a computed eigenvalue. ``auto`` picks
    ``spectral`` for large sparse-engine problems with more than three
    energies, ``inertia`` otherwise.
    """
    energies = np.asarray(energies, dtype=float)
    meta = {"method": method, "perturbed": []}
    if op.separable:
        meta["method"] = "separable"
        return np.array([_separable_count(op, E) for E in energies], dtype=np.int64), meta
    if method == "auto":
        big = op.n_transverse > BLOCK_TRANSVERSE_LIMIT
        method = "spectral" if (big and energies.size > 3) else "inertia"
        meta["method"] = method
    if method == "inertia":
        out = []
        for E in energies:
            r = count_below_3d(op, E)
            out.append(r.count)
            if r.perturbed:
                meta["perturbed"].append(float(E))
        return np.array(out, dtype=np.int64), meta
    if method != "spectral":
        raise ValueError(f"unknown counting method {method!r}")
    top = count_below_3d(op, energies.max())
    if top.perturbed:
        meta["perturbed"].append(float(energies.max()))
    total = top.count
    if total == 0:
        return np.zeros(energies.size, dtype=np.int64), meta
    lam = _lowest_eigenvalues(op, total)
    counts = np.searchsorted(lam, energies, side="left").astype(np.int64)
    if counts.max() != total or lam.size < total:
        raise RuntimeError("shift-invert spectrum disagrees with the inertia count")
    scale = max(1.0, float(np.abs(energies).max()))
    for i, E in enumerate(energies):
        if np.any(np.abs(lam - E) <= guard * scale):
            r = count_below_3d(op, E)
            counts[i] = r.count
            if r.perturbed:
                meta["perturbed"].append(float(E))
    meta["certified_by_inertia"] = True
    return counts, meta


def _lowest_eigenvalues(op, k):
    A = op.matrix
    n = A.shape[0]
    if n <= 1500:
        return np.linalg.eigvalsh(A.toarray())[:k]
    # spectrum is bounded below by mu1^h; shift just beneath it
    sigma = op.mu1 - 1e-6 * max(1.0, abs(op.mu1))
    ncv = min(n - 1, max(2 * k + 1, k + 20))
    vals = sla.eigsh(A, k=k, sigma=sigma, which="LM", ncv=ncv, tol=1e-12, v0=np.ones(n),
                     return_eigenvectors=False)
    return np.sort(vals)


# -- ensemble -------------------------------------------------------------------


def _realization(args):
    cs, spectrum, profile, law, ell, h_s, energies, seed, rep, tail_tol, max_nnz, method = args
    field = sample_twist(profile, law, ell, h_s, seed, rep=rep, tail_tol=tail_tol)
    op = assemble_3d(cs, field, spectrum, max_nnz=max_nnz)
    counts, meta = count_curve_3d(op, spectrum.mu1 + energies, method)
    return counts, meta


def ids_3d(cs: CrossSection, profile: SingleSiteProfile, law: CouplingLaw, ell, h_s, E_offsets, reps, seed,
           spectrum: TransverseSpectrum | None = None, workers=1, tail_tol=1e-6, max_nnz=DEFAULT_MAX_NNZ,
           method="auto") -> IdsCurve:
    """Ensemble counting function per unit length at ``mu1^h + E``.

    The transverse resolution is ``cs.resolution``; energies are offsets
    above the discrete ground energy ``mu1^h``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    energies = np.asarray(E_offsets, dtype=float)
    if np.any(np.diff(energies) < 0):
        raise ValueError("E grid must be sorted")
    if spectrum is None:
        spectrum = solve_transverse(cs)
    jobs = [(cs, spectrum, profile, law, ell, h_s, energies, seed, r, tail_tol, max_nnz, method)
            for r in range(reps)]
    workers = min(int(workers or 1), reps, os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_realization, jobs))
    else:
        results = [_realization(job) for job in jobs]
    counts = np.array([c for c, _ in results])
    perturbed = sorted({e for _, m in results for e in m["perturbed"]})
    meta = dict(h_s=h_s, eps=0.0, seed=seed, h_t=spectrum.grid.h, geometry=cs.kind, mu1_h=spectrum.mu1,
                profile=profile.to_dict(), law=law.to_dict(), cross_section=cs.to_dict(),
                count_method=results[0][1]["method"], perturbed_shifts=perturbed)
    return IdsCurve(energies, counts, ell, meta)
