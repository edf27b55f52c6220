"""Transverse Dirichlet problem on a bounded planar cross-section.

The cross-section is discretized on a uniform lattice of spacing ``h``;
nodes strictly inside the domain are unknowns, everything else carries the
Dirichlet value zero (staircase boundary).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

KINDS = ("rectangle", "disc", "ellipse", "l_shape")

# lattice points per side required by solve_transverse
MIN_POINTS_PER_SIDE = 16
# dense eigensolver below this many unknowns
_DENSE_LIMIT = 600


@dataclass(frozen=True)
class CrossSection:
    """Planar domain descriptor.

    ``dims`` depends on ``kind``: ``(width, height)`` for a rectangle,
    ``(radius,)`` for a disc, ``(a_semi, b_semi)`` for an ellipse and
    ``(arm, thickness)`` for an L-shape.  Every kind is centered so that its
    bounding box is centered at ``offset``.
    """

    kind: str
    dims: tuple
    resolution: float
    offset: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cross-section kind {self.kind!r}")
        dims = tuple(float(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "offset", tuple(float(c) for c in self.offset))
        expected = 1 if self.kind == "disc" else 2
        if len(dims) != expected:
            raise ValueError(f"{self.kind} takes {expected} dimension(s), got {len(dims)}")
        if not all(math.isfinite(d) and d > 0 for d in dims):
            raise ValueError("cross-section dimensions must be positive")
        if self.kind == "l_shape" and dims[1] >= dims[0]:
            raise ValueError("l_shape thickness must be smaller than the arm length")
        if not (math.isfinite(self.resolution) and self.resolution > 0):
            raise ValueError("resolution must be positive")

    @classmethod
    def rectangle(cls, width, height, resolution, offset=(0.0, 0.0)):
        return cls("rectangle", (width, height), resolution, offset)

    @classmethod
    def disc(cls, radius, resolution, offset=(0.0, 0.0)):
        return cls("disc", (radius,), resolution, offset)

    @classmethod
    def ellipse(cls, a_semi, b_semi, resolution, offset=(0.0, 0.0)):
        return cls("ellipse", (a_semi, b_semi), resolution, offset)

    @classmethod
    def l_shape(cls, arm, thickness, resolution, offset=(0.0, 0.0)):
        return cls("l_shape", (arm, thickness), resolution, offset)

    def with_resolution(self, resolution):
        return CrossSection(self.kind, self.dims, resolution, self.offset)

    def to_dict(self):
        return {
            "kind": self.kind,
            "dims": list(self.dims),
            "resolution": self.resolution,
            "offset": list(self.offset),
        }

    @property
    def half_extent(self):
        if self.kind == "rectangle":
            return self.dims[0] / 2, self.dims[1] / 2
        if self.kind == "disc":
            return self.dims[0], self.dims[0]
        if self.kind == "ellipse":
            return self.dims
        return self.dims[0] / 2, self.dims[0] / 2

    def vertices(self):
        """Polygon vertices (rectangle and L-shape only), offset applied."""
        cx, cy = self.offset
        if self.kind == "rectangle":
            w, h = self.half_extent
            pts = [(-w, -h), (w, -h), (w, h), (-w, h)]
        elif self.kind == "l_shape":
            arm, t = self.dims
            s = arm / 2
            pts = [(-s, -s), (s, -s), (s, -s + t), (-s + t, -s + t), (-s + t, s), (-s, s)]
        else:
            raise ValueError(f"{self.kind} has no vertices")
        return np.array([(x + cx, y + cy) for x, y in pts])

    def boundary_points(self, samples=64):
        """``samples`` points along the boundary, counterclockwise, offset applied."""
        t = np.arange(samples) / samples
        if self.kind in ("disc", "ellipse"):
            a, b = self.half_extent
            ang = 2 * np.pi * t
            return np.column_stack([self.offset[0] + a * np.cos(ang), self.offset[1] + b * np.sin(ang)])
        verts = self.vertices()
        closed = np.vstack([verts, verts[:1]])
        seg = np.hypot(*np.diff(closed, axis=0).T)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        pos = t * arc[-1]
        return np.column_stack([np.interp(pos, arc, closed[:, 0]), np.interp(pos, arc, closed[:, 1])])

    def centroid(self):
        if self.kind != "l_shape":
            return self.offset
        arm, t = self.dims
        s = arm / 2
        # union of the horizontal bar and the vertical bar minus the shared square
        parts = [
            (arm * t, -s + arm / 2, -s + t / 2),
            (arm * t, -s + t / 2, -s + arm / 2),
            (-t * t, -s + t / 2, -s + t / 2),
        ]
        area = sum(p[0] for p in parts)
        cx = sum(p[0] * p[1] for p in parts) / area
        cy = sum(p[0] * p[2] for p in parts) / area
        return cx + self.offset[0], cy + self.offset[1]

    def contains(self, x1, x2):
        """Strict interior test, vectorized."""
        x = np.asarray(x1, dtype=float) - self.offset[0]
        y = np.asarray(x2, dtype=float) - self.offset[1]
        scale = max(self.half_extent)
        eps = 1e-10 * scale
        if self.kind == "rectangle":
            w, h = self.half_extent
            return (np.abs(x) < w - eps) & (np.abs(y) < h - eps)
        if self.kind == "disc":
            r = self.dims[0]
            return np.hypot(x, y) < r - eps
        if self.kind == "ellipse":
            a, b = self.dims
            return (x / a) ** 2 + (y / b) ** 2 < 1 - 1e-10
        arm, t = self.dims
        s = arm / 2
        inside_box = (np.abs(x) < s - eps) & (np.abs(y) < s - eps)
        in_bars = (y < -s + t - eps) | (x < -s + t - eps)
        return inside_box & in_bars


@dataclass
class TransverseGrid:
    """Masked lattice with the interior unknowns and the boundary ring.

    ``neighbors[d]`` holds, for every unknown, the unknown index of its
    neighbor in direction ``d`` (``+x1, -x1, +x2, -x2``) or ``-1`` when that
    neighbor lies outside the domain.  Boundary nodes are the lattice nodes
    outside the domain adjacent to an unknown; they carry the Dirichlet zero
    and a quadrature weight equal to the fraction of their dual cell lying
    inside the domain.
    """

    h: float
    x1: np.ndarray
    x2: np.ndarray
    neighbors: np.ndarray
    mask: np.ndarray
    lattice_x1: np.ndarray
    lattice_x2: np.ndarray
    boundary_x1: np.ndarray
    boundary_x2: np.ndarray
    boundary_weight: np.ndarray
    _dtau: sp.csr_matrix = field(repr=False)

    @property
    def size(self):
        return self.x1.size

    @property
    def quadrature_weights(self):
        """Weights of the rows of :meth:`dtau` (interior nodes first)."""
        return np.concatenate([np.ones(self.size), self.boundary_weight])

    def laplacian(self):
        """Five-point Dirichlet Laplacian on the unknowns (sparse CSR)."""
        n = self.size
        rows, cols = [], []
        for d in range(4):
            nb = self.neighbors[d]
            ok = nb >= 0
            rows.append(np.nonzero(ok)[0])
            cols.append(nb[ok])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        adj = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        lap = (4.0 * sp.identity(n) - adj) / self.h**2
        return lap.tocsr()

    def dtau(self):
        """Matrix of x1*d/dx2 - x2*d/dx1 from unknowns to interior+boundary nodes.

        Central differences wherever both neighbors are interior or boundary
        nodes, second-order one-sided differences otherwise.  The square block
        acting between unknowns is antisymmetric.
        """
        return self._dtau


def _dual_cell_fraction(cs, x1, x2, h, sub=16):
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    ox, oy = np.meshgrid(offs * h, offs * h, indexing="ij")
    inside = cs.contains(x1[:, None] + ox.ravel()[None, :], x2[:, None] + oy.ravel()[None, :])
    return inside.mean(axis=1)


def build_grid(cs: CrossSection) -> TransverseGrid:
    h = cs.resolution
    hx, hy = cs.half_extent
    cx, cy = cs.offset

    def axis(c, half):
        count = int(math.floor(2 * half / h * (1 + 1e-12)))
        # one ring beyond the bounding box so every boundary node has a slot
        return c - half + h * np.arange(-1, count + 3)

    lx = axis(cx, hx)
    ly = axis(cy, hy)
    X1, X2 = np.meshgrid(lx, ly, indexing="ij")
    mask = cs.contains(X1, X2)
    if not mask.any():
        raise ValueError("cross-section mask has no interior points at this resolution")
    n = int(mask.sum())

    near = np.zeros_like(mask)
    near[1:, :] |= mask[:-1, :]
    near[:-1, :] |= mask[1:, :]
    near[:, 1:] |= mask[:, :-1]
    near[:, :-1] |= mask[:, 1:]
    bmask = near & ~mask
    nb_ = int(bmask.sum())

    number = -np.ones(mask.shape, dtype=np.int64)
    number[mask] = np.arange(n)
    row_of = -np.ones(mask.shape, dtype=np.int64)
    row_of[mask] = np.arange(n)
    row_of[bmask] = n + np.arange(nb_)

    padded = np.pad(number, 1, constant_values=-1)
    shifts = [padded[2:, 1:-1], padded[:-2, 1:-1], padded[1:-1, 2:], padded[1:-1, :-2]]
    neighbors = np.stack([s[mask] for s in shifts])

    avail = np.pad(mask | bmask, 2, constant_values=False)
    unk = np.pad(number, 2, constant_values=-1)
    rows, cols, vals = [], [], []
    nodes = np.argwhere(mask | bmask)
    for (i, j) in nodes:
        r = row_of[i, j]
        x, y = X1[i, j], X2[i, j]
        # d/dx1 weighted by -x2, d/dx2 weighted by x1
        for (di, dj), weight in (((1, 0), -y), ((0, 1), x)):
            if weight == 0.0:
                continue
            pi, pj = i + 2, j + 2
            fwd = avail[pi + di, pj + dj]
            bwd = avail[pi - di, pj - dj]
            if fwd and bwd:
                stencil = ((1, 0.5), (-1, -0.5))
            elif bwd and avail[pi - 2 * di, pj - 2 * dj]:
                stencil = ((0, 1.5), (-1, -2.0), (-2, 0.5))
            elif fwd and avail[pi + 2 * di, pj + 2 * dj]:
                stencil = ((0, -1.5), (1, 2.0), (2, -0.5))
            elif bwd:
                stencil = ((0, 1.0), (-1, -1.0))
            elif fwd:
                stencil = ((1, 1.0), (0, -1.0))
            else:
                continue
            for step, coef in stencil:
                c = unk[pi + step * di, pj + step * dj]
                if c >= 0:
                    rows.append(r)
                    cols.append(c)
                    vals.append(weight * coef / h)
    dtau = sp.coo_matrix((vals, (rows, cols)), shape=(n + nb_, n)).tocsr()

    bx, by = X1[bmask], X2[bmask]
    # boundary rows are ordered like np.argwhere / boolean indexing (row-major)
    weight = _dual_cell_fraction(cs, bx, by, h)
    return TransverseGrid(h, X1[mask], X2[mask], neighbors, mask, lx, ly, bx, by, weight, dtau)


@dataclass
class TransverseSpectrum:
    mu: np.ndarray
    phi1: np.ndarray
    coupling_T: float
    radius_a: float
    resolution: float
    grid: TransverseGrid = field(repr=False)

    @property
    def gap(self):
        return float(self.mu[1] - self.mu[0])

    @property
    def mu1(self):
        return float(self.mu[0])

    @property
    def mu2(self):
        return float(self.mu[1])

    def to_dict(self, include_phi=False):
        out = {
            "mu": [float(m) for m in self.mu],
            "coupling_T": float(self.coupling_T),
            "radius_a": float(self.radius_a),
            "gap": self.gap,
            "resolution": float(self.resolution),
        }
        if include_phi:
            out["phi1"] = [float(v) for v in self.phi1]
            out["x1"] = [float(v) for v in self.grid.x1]
            out["x2"] = [float(v) for v in self.grid.x2]
        return out


def lowest_eigenpairs(matrix, k):
    """Lowest ``k`` eigenpairs of a sparse symmetric positive matrix."""
    n = matrix.shape[0]
    if k > n:
        raise ValueError(f"requested {k} modes but the grid has only {n} unknowns")
    if n <= _DENSE_LIMIT or k >= n - 1:
        vals, vecs = sla.eigh(matrix.toarray(), subset_by_index=(0, k - 1))
        return vals, vecs
    try:
        vals, vecs = spla.eigsh(matrix.tocsc(), k=k, sigma=0.0, which="LM", v0=np.ones(matrix.shape[0]))
    except spla.ArpackNoConvergence as exc:
        raise RuntimeError(f"transverse eigensolver failed to converge: {exc}") from exc
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def _points_per_side(grid: TransverseGrid):
    return min(grid.mask.any(axis=1).sum(), grid.mask.any(axis=0).sum())


def solve_transverse(cs: CrossSection, num_modes: int = 2) -> TransverseSpectrum:
    """Lowest Dirichlet eigenvalues of the cross-section and derived constants."""
    if num_modes < 2:
        raise ValueError("num_modes must be at least 2")
    grid = build_grid(cs)
    if _points_per_side(grid) < MIN_POINTS_PER_SIDE:
        raise ValueError(
            f"resolution {cs.resolution} leaves fewer than {MIN_POINTS_PER_SIDE} "
            "interior points across the domain"
        )
    vals, vecs = lowest_eigenpairs(grid.laplacian(), num_modes)
    phi = vecs[:, 0] / (np.linalg.norm(vecs[:, 0]) * grid.h)

    cx, cy = cs.centroid()
    nearest = np.argmin((grid.x1 - cx) ** 2 + (grid.x2 - cy) ** 2)
    if phi[nearest] < 0:
        phi = -phi
    if not vals[0] < vals[1]:
        raise RuntimeError("degenerate ground state: mu1 == mu2 on this grid")

    spec = TransverseSpectrum(
        mu=np.asarray(vals, dtype=float),
        phi1=phi,
        coupling_T=0.0,
        radius_a=geometry_radius(cs),
        resolution=cs.resolution,
        grid=grid,
    )
    spec.coupling_T = coupling_constant(spec, cs)
    return spec


def coupling_constant(spec: TransverseSpectrum, cs: CrossSection | None = None) -> float:
    """L2 norm of the angular derivative of the ground state.

    Quadrature runs over the interior nodes and the weighted boundary ring,
    where the angular derivative of a Dirichlet eigenfunction is nonzero.
    """
    grid = spec.grid
    if cs is not None and not math.isclose(cs.resolution, grid.h):
        raise ValueError("spectrum and cross-section resolutions differ")
    norm = np.linalg.norm(spec.phi1) * grid.h
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"ground state is not L2-normalized (norm {norm:.12g})")
    dphi = grid.dtau() @ spec.phi1
    return float(math.sqrt(np.sum(grid.quadrature_weights * dphi**2)) * grid.h)


def geometry_radius(cs: CrossSection) -> float:
    """sup |x| over the closed domain, from the exact geometry."""
    cx, cy = cs.offset
    if cs.kind in ("rectangle", "l_shape"):
        return float(np.max(np.hypot(*cs.vertices().T)))
    if cs.kind == "disc":
        return cs.dims[0] + math.hypot(cx, cy)
    a, b = cs.dims
    if cx == 0.0 and cy == 0.0:
        return max(a, b)
    # maximize |(a cos t + cx, b sin t + cy)| over the boundary
    from scipy.optimize import minimize_scalar

    def neg(t):
        return -math.hypot(a * math.cos(t) + cx, b * math.sin(t) + cy)

    ts = np.linspace(0, 2 * math.pi, 721)
    t0 = ts[np.argmin([neg(t) for t in ts])]
    res = minimize_scalar(neg, bracket=(t0 - 0.01, t0, t0 + 0.01))
    return float(-res.fun)
