"""Single-site profiles, coupling laws and random twist realizations.

A realization of the twist speed is the lattice sum

    gamma(s) = sum_k lambda_k w(s - k)

with i.i.d. couplings ``lambda_k``.  Couplings are drawn from a counter-based
generator keyed by the absolute site index, so enlarging the box extends a
realization instead of reshuffling it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import zeta

PROFILE_KINDS = ("power_law", "bump")
LAW_KINDS = ("uniform", "two_point", "scaled_uniform_power")

# sites per counter block of the coupling generator
_BLOCK = 1024
# binomial terms in the far-zone expansion (ratio <= 1/2)
_FAR_TERMS = 56


# -- profiles -----------------------------------------------------------------


@dataclass(frozen=True)
class SingleSiteProfile:
    """Closed-form single-site twisting ``w`` and its derivative.

    ``power_law``: ``w(s) = C (1 + |s|)^-alpha``.  ``bump``: the window
    ``A (cos(2 pi s / beta) + 1)^2 / 4`` on ``[-beta/2, beta/2]`` with
    ``beta = 2p + 1``; value and derivative vanish at the ends, peak ``A`` at 0.
    """

    kind: str
    amplitude: float
    alpha: float | None = None
    half_cells: int | None = None

    @property
    def beta(self):
        if self.kind != "bump":
            return math.inf
        return 2 * self.half_cells + 1

    @property
    def compact(self):
        return self.kind == "bump"

    def w(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power_law":
            return self.amplitude * (1.0 + np.abs(s)) ** (-self.alpha)
        beta = self.beta
        inside = np.abs(s) <= beta / 2
        c = np.cos(2 * np.pi * s / beta) + 1.0
        return np.where(inside, self.amplitude * c**2 / 4.0, 0.0)

    def wdot(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "power_law":
            # the kink at the origin is assigned derivative zero
            return -self.alpha * self.amplitude * np.sign(s) * (1.0 + np.abs(s)) ** (-self.alpha - 1)
        beta = self.beta
        inside = np.abs(s) <= beta / 2
        x = 2 * np.pi * s / beta
        val = -self.amplitude * (np.cos(x) + 1.0) * np.sin(x) * np.pi / beta
        return np.where(inside, val, 0.0)

    def lattice_sum(self, s):
        """sum_k |w(s - k)|, exact (Hurwitz zeta for the power law)."""
        s = np.asarray(s, dtype=float)
        if self.kind == "power_law":
            frac = s - np.floor(s)
            return self.amplitude * (zeta(self.alpha, 1.0 + frac) + zeta(self.alpha, 2.0 - frac))
        reach = self.half_cells + 1
        k0 = np.round(s)
        return sum(np.abs(self.w(s - (k0 + j))) for j in range(-reach, reach + 1))

    @property
    def log_derivative_bound(self):
        """sup |w'/w|; finite only for profiles that never vanish."""
        if self.kind == "power_law":
            return self.alpha
        return math.inf

    # validity flags for the standing hypotheses on w
    @property
    def decay_ok(self):
        return True

    @property
    def lower_power_bound(self):
        return self.kind == "power_law"

    @property
    def nonnegative(self):
        return self.amplitude > 0

    def to_dict(self):
        out = {"kind": self.kind, "amplitude": self.amplitude}
        if self.kind == "power_law":
            out["alpha"] = self.alpha
        else:
            out["half_cells"] = self.half_cells
        return out


def make_profile(kind, **params) -> SingleSiteProfile:
    """Build a single-site profile.

    >>> make_profile("power_law", alpha=1.5, amplitude=1.0).w(1.0)
    array(0.35355339)
    """
    if kind == "power_law":
        alpha = float(params.pop("alpha"))
        amp = float(params.pop("amplitude", 1.0))
        if not alpha > 1:
            raise ValueError(f"power-law decay exponent must exceed 1, got {alpha}")
        if params:
            raise ValueError(f"unexpected profile parameters {sorted(params)}")
        if not amp > 0:
            raise ValueError("profile amplitude must be positive")
        return SingleSiteProfile("power_law", amp, alpha=alpha)
    if kind == "bump":
        p = params.pop("half_cells", 0)
        amp = float(params.pop("amplitude", 1.0))
        if params:
            raise ValueError(f"unexpected profile parameters {sorted(params)}")
        if int(p) != p or p < 0:
            raise ValueError("bump half_cells must be a nonnegative integer")
        if not amp > 0:
            raise ValueError("profile amplitude must be positive")
        return SingleSiteProfile("bump", amp, half_cells=int(p))
    raise ValueError(f"unknown profile kind {kind!r}")


# -- coupling laws --------------------------------------------------------------


@dataclass(frozen=True)
class CouplingLaw:
    """Compactly supported law of the i.i.d. couplings.

    ``two_point(v0, v1, prob)`` puts mass ``prob`` on ``v1``.
    ``scaled_uniform_power(kappa, scale)`` is ``scale * U^(1/kappa)``, so
    ``P(|lambda| < eps) = (eps/scale)^kappa``.
    """

    kind: str
    params: tuple
    lambda_minus: float
    lambda_plus: float
    lambda_tilde_minus: float
    lambda_tilde_plus: float
    concentration_kappa: float | None

    @property
    def degenerate(self):
        return self.lambda_minus == self.lambda_plus

    @property
    def max_modulus(self):
        return max(abs(self.lambda_minus), abs(self.lambda_plus))

    @property
    def nonnegative(self):
        return self.lambda_minus >= 0

    def transform(self, u):
        """Map uniforms on [0, 1) to couplings."""
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * u
        if self.kind == "two_point":
            v0, v1, prob = self.params
            return np.where(u < prob, v1, v0)
        kappa, scale = self.params
        return scale * u ** (1.0 / kappa)

    def sample(self, size, seed):
        return self.transform(np.random.default_rng(seed).random(size))

    def to_dict(self):
        names = {
            "uniform": ("lo", "hi"),
            "two_point": ("v0", "v1", "prob"),
            "scaled_uniform_power": ("kappa", "scale"),
        }[self.kind]
        out = {"kind": self.kind}
        out.update(zip(names, self.params))
        return out


def make_coupling_law(kind, **params) -> CouplingLaw:
    """Build a coupling law, rejecting laws whose squared couplings stay away from 0.

    The all-zero two-point law is accepted as a degenerate ensemble (straight
    tube); every other law must have ``lambda_minus < lambda_plus``.
    """
    if kind == "uniform":
        lo, hi = float(params.pop("lo")), float(params.pop("hi"))
        if not lo < hi:
            raise ValueError("uniform law needs lo < hi")
        support = (lo, hi)
        # P(|lambda| < eps) ~ eps / (hi - lo) (or 2 eps / (hi - lo) inside)
        kappa = 1.0
        args = (lo, hi)
    elif kind == "two_point":
        v0, v1 = float(params.pop("v0")), float(params.pop("v1"))
        prob = float(params.pop("prob", 0.5))
        if not 0 < prob < 1:
            raise ValueError("two_point probability must lie in (0, 1)")
        support = (min(v0, v1), max(v0, v1))
        # an atom at zero satisfies the small-ball bound for every kappa
        kappa = None
        args = (v0, v1, prob)
    elif kind == "scaled_uniform_power":
        kappa = float(params.pop("kappa"))
        scale = float(params.pop("scale", 1.0))
        if not (kappa > 0 and scale != 0):
            raise ValueError("scaled_uniform_power needs kappa > 0 and nonzero scale")
        support = (min(0.0, scale), max(0.0, scale))
        args = (kappa, scale)
    else:
        raise ValueError(f"unknown coupling law {kind!r}")
    if params:
        raise ValueError(f"unexpected law parameters {sorted(params)}")
    if not all(math.isfinite(v) for v in support):
        raise ValueError("coupling law must have bounded support")

    lo, hi = support
    if kind == "two_point":
        squares = (args[0] ** 2, args[1] ** 2)
        tilde_minus = min(squares)
    else:
        tilde_minus = 0.0 if lo <= 0 <= hi else min(lo * lo, hi * hi)
    tilde_plus = max(lo * lo, hi * hi)
    if tilde_minus > 0:
        raise ValueError(
            "essinf lambda_0^2 must vanish: the law must charge every "
            f"neighborhood of zero, support is [{lo}, {hi}]"
        )
    if lo == hi and not (kind == "two_point" and lo == 0.0):
        raise ValueError("coupling law must not be concentrated in a single point")
    return CouplingLaw(kind, args, lo, hi, tilde_minus, tilde_plus, kappa)


# -- counter-based draws --------------------------------------------------------


def realization_key(seed, rep=None):
    """Two 64-bit words keying the site generator of one realization."""
    spawn = () if rep is None else (int(rep),)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn)
    return ss.generate_state(2, dtype=np.uint64)


def site_uniforms(key, k_lo, k_hi):
    """Uniforms on [0, 1) for sites ``k_lo..k_hi`` (inclusive).

    The value at site ``k`` depends only on ``(key, k)``.
    """
    b_lo, b_hi = k_lo // _BLOCK, k_hi // _BLOCK
    out = np.empty((b_hi - b_lo + 1) * _BLOCK)
    for i, b in enumerate(range(b_lo, b_hi + 1)):
        counter = np.array([0, b % 2**64, 0, 0], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(counter=counter, key=key))
        out[i * _BLOCK:(i + 1) * _BLOCK] = gen.random(_BLOCK)
    start = k_lo - b_lo * _BLOCK
    return out[start:start + (k_hi - k_lo + 1)]


# -- twist fields -----------------------------------------------------------------


@dataclass(frozen=True)
class TwistField:
    """One twist realization on the cell-centered grid of ``(-ell/2, ell/2)``.

    ``s`` are the ``ell/h_s`` cell centers; ``s_mid`` are the ``ell/h_s + 1``
    cell edges (including the endpoints), where the 3D operator samples the
    twist for its mixed term.
    """

    ell: float
    h_s: float
    s: np.ndarray
    gamma: np.ndarray
    gamma_dot: np.ndarray
    s_mid: np.ndarray
    gamma_mid: np.ndarray
    seed: int | None
    truncation_K: int
    sites: np.ndarray = field(repr=False)
    lambda_draws: np.ndarray = field(repr=False)
    tail_bound: float = 0.0

    @property
    def n(self):
        return self.s.size

    def is_zero(self):
        return not (np.any(self.gamma) or np.any(self.gamma_dot) or np.any(self.gamma_mid))

    def to_csv(self, path):
        data = np.column_stack([self.s, self.gamma, self.gamma_dot])
        np.savetxt(path, data, delimiter=",", header="s,gamma,gamma_dot", comments="", fmt="%.17g")


def check_grid(ell, h_s):
    ratio = ell / h_s
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"ell/h_s must be a positive integer, got {ratio}")
    return n


def cell_grid(ell, h_s):
    n = check_grid(ell, h_s)
    # integer-exact offsets: nested boxes share bit-identical coordinates
    s = (2 * np.arange(n) + 1 - n) * (h_s / 2)
    s_mid = (2 * np.arange(n + 1) - n) * (h_s / 2)
    return s, s_mid


def tail_bound(profile, max_modulus, ell, K):
    """Sup over the box of the dropped sum over sites beyond ell/2 + K."""
    if profile.compact:
        return 0.0
    a = profile.alpha
    return profile.amplitude * max_modulus * ((K + 1) ** (1 - a) + (K + 1 + ell) ** (1 - a)) / (a - 1)


def truncation_for(profile, max_modulus, ell, tail_tol):
    """Smallest K whose tail bound is below ``tail_tol``."""
    if profile.compact:
        return int(math.ceil(profile.beta / 2))
    if max_modulus == 0:
        return 0
    a = profile.alpha
    guess = (profile.amplitude * max_modulus / ((a - 1) * tail_tol)) ** (1 / (a - 1))
    if not math.isfinite(guess) or guess > 1e15:
        return math.inf
    lo, hi = 0, max(1, int(math.ceil(guess)))
    while tail_bound(profile, max_modulus, ell, hi) > tail_tol:
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if tail_bound(profile, max_modulus, ell, mid) <= tail_tol:
            hi = mid
        else:
            lo = mid + 1
    return hi


def _compact_sum(fn, reach, points, sites, lambdas):
    k_lo = sites[0]
    k0 = np.round(points).astype(np.int64)
    out = np.zeros_like(points)
    for j in range(-reach, reach + 1):
        k = k0 + j
        idx = k - k_lo
        ok = (idx >= 0) & (idx < sites.size)
        out[ok] += lambdas[idx[ok]] * fn(points[ok] - k[ok])
    return out


def _near_sum(fn, points, ell, h_s, sites, lambdas):
    """Direct lattice sum over ``sites`` at ``points`` on the half grid."""
    q = 1.0 / h_s
    half = points.size  # points = -ell/2 + m h_s/2, m = 0..2n
    if abs(q - round(q)) < 1e-9:
        # sites sit on the half grid: exact FFT convolution
        step = h_s / 2
        pos = np.rint((sites + ell / 2) / step).astype(np.int64)
        lo = pos.min()
        spikes = np.zeros(pos.max() - lo + 1)
        np.add.at(spikes, pos - lo, lambdas)
        # kernel index t covers m - pos for m in [0, half), pos in [lo, hi]
        t_min, t_max = -(pos.max()), half - 1 - lo
        kernel = fn(step * np.arange(t_min, t_max + 1))
        full = fftconvolve(spikes, kernel)
        # full[i] = sum_j spikes[j] kernel[i - j]; m - (lo + j) = t = i - j + t_min
        start = -t_min - lo
        return full[start:start + half]
    out = np.zeros_like(points)
    for chunk in np.array_split(np.arange(sites.size), max(1, sites.size // 256)):
        out += fn(points[:, None] - sites[chunk][None, :]) @ lambdas[chunk]
    return out


def _far_power_law(profile, points, sites, lambdas, derivative=False):
    """Power-law sum over sites beyond the near zone, by a binomial expansion.

    A site at ``x = 1 + |k|`` contributes ``C (x -+ t)^-a``, expanded in
    powers of ``t/x``.  Sites are grouped in dyadic shells of ``x``; each
    shell is expanded about its inner radius with just enough terms for
    double precision.  The derivative kernel is ``+-a C (x -+ t)^-(a+1)``.
    """
    out = np.zeros_like(points)
    a = profile.alpha + (1 if derivative else 0)
    tmax = float(np.max(np.abs(points))) if points.size else 0.0
    for side in (1, -1):
        sel = sites * side > 0
        if not np.any(sel):
            continue
        x_all = 1.0 + np.abs(sites[sel]).astype(float)
        lam_all = lambdas[sel]
        order = np.argsort(x_all, kind="stable")
        x_all, lam_all = x_all[order], lam_all[order]
        weight = profile.amplitude * (side * profile.alpha if derivative else 1.0)
        lo = x_all[0]
        while lo <= x_all[-1]:
            hi = 2 * lo
            i0, i1 = np.searchsorted(x_all, [lo, hi])
            if i1 > i0:
                x = x_all[i0:i1]
                ratio = lo / x
                v = lam_all[i0:i1] * x ** (-a)
                u = side * points / lo
                q = tmax / lo
                terms = _FAR_TERMS if q <= 0 else min(_FAR_TERMS, int(np.ceil(-37.0 / np.log(q))) + 2)
                coef = 1.0
                term = np.ones_like(points)
                acc = np.zeros_like(points)
                for j in range(terms):
                    if j:
                        coef *= (a + j - 1) / j
                        v = v * ratio
                        term = term * u
                    acc += (coef * v.sum()) * term
                out += weight * acc
            lo = hi
    return out


def twist_from_couplings(profile, sites, lambdas, ell, h_s, seed=None, truncation_K=None, tail=0.0):
    """Evaluate gamma, gamma' on the grid from explicit couplings.

    ``sites`` must be a contiguous increasing run of integers.
    """
    sites = np.asarray(sites, dtype=np.int64)
    lambdas = np.asarray(lambdas, dtype=float)
    if sites.size and np.any(np.diff(sites) != 1):
        raise ValueError("sites must be consecutive integers")
    s, s_mid = cell_grid(ell, h_s)
    # merged half grid: edges at even indices, centers at odd ones
    points = (np.arange(2 * s.size + 1) - s.size) * (h_s / 2)
    if sites.size == 0 or not np.any(lambdas):
        g = np.zeros_like(points)
        gd = np.zeros_like(points)
    elif profile.compact:
        reach = profile.half_cells + 1
        g = _compact_sum(profile.w, reach, points, sites, lambdas)
        gd = _compact_sum(profile.wdot, reach, points, sites, lambdas)
    else:
        k_near = int(max(ell / 2, 64))
        near = np.abs(sites) <= ell / 2 + k_near
        g = _near_sum(profile.w, points, ell, h_s, sites[near], lambdas[near])
        gd = _near_sum(profile.wdot, points, ell, h_s, sites[near], lambdas[near])
        g = g + _far_power_law(profile, points, sites[~near], lambdas[~near])
        gd = gd + _far_power_law(profile, points, sites[~near], lambdas[~near], derivative=True)
    K = truncation_K if truncation_K is not None else -1
    return TwistField(
        ell=float(ell),
        h_s=float(h_s),
        s=s,
        gamma=g[1::2].copy(),
        gamma_dot=gd[1::2].copy(),
        s_mid=s_mid,
        gamma_mid=g[0::2].copy(),
        seed=seed,
        truncation_K=K,
        sites=sites,
        lambda_draws=lambdas,
        tail_bound=tail,
    )


def sample_twist(profile, law, ell, h_s, seed, rep=None, tail_tol=1e-6, max_sites=50_000_000):
    """Draw one realization of the random twist on the box ``(-ell/2, ell/2)``.

    Sites ``|k| <= ell/2 + K`` are kept, with ``K`` the smallest truncation
    whose certified tail bound is at most ``tail_tol`` (exact for compact
    profiles).
    """
    check_grid(ell, h_s)
    K = truncation_for(profile, law.max_modulus, ell, tail_tol)
    if not math.isfinite(K) or 2 * (ell / 2 + K) > max_sites:
        raise ValueError(
            f"tail tolerance {tail_tol} needs truncation K={K} beyond the site budget "
            f"{max_sites}; raise tail_tol"
        )
    k_lo = int(math.floor(-ell / 2 - K))
    k_hi = int(math.ceil(ell / 2 + K))
    sites = np.arange(k_lo, k_hi + 1)
    lambdas = law.transform(site_uniforms(realization_key(seed, rep), k_lo, k_hi))
    tail = tail_bound(profile, law.max_modulus, ell, K)
    return twist_from_couplings(profile, sites, lambdas, ell, h_s, seed=seed, truncation_K=K, tail=tail)


# -- deterministic constants -------------------------------------------------------


@dataclass
class ThinnessReport:
    D1: float
    D2: float | None
    lhs_d4: float
    lhs_d6: float | None
    delta0: float | None
    admissible_d4: tuple | None
    admissible_d6: tuple | None
    passes_d4: bool
    passes_d6: bool

    def to_dict(self):
        return {
            "D1": self.D1,
            "D2": "undefined" if self.D2 is None else self.D2,
            "lhs_d4": self.lhs_d4,
            "lhs_d6": "undefined" if self.lhs_d6 is None else self.lhs_d6,
            "delta0": self.delta0,
            "admissible_delta_d4": list(self.admissible_d4) if self.admissible_d4 else None,
            "admissible_delta_d6": list(self.admissible_d6) if self.admissible_d6 else None,
            "passes_d4": self.passes_d4,
            "passes_d6": self.passes_d6,
        }


def envelope_sup(profile, max_modulus, oversample=1000):
    """sup_s of the worst-case field max|lambda| * sum_k |w(s-k)| over one period."""
    s = np.linspace(0.0, 1.0, oversample + 1)
    return max_modulus * float(np.max(profile.lattice_sum(s)))


def thinness_constants(profile, law, spec, delta0=None) -> ThinnessReport:
    """D1, D2 and the two thinness conditions for a transverse spectrum.

    D2 uses sup(6 gamma^2) + 2 sup(gamma'/gamma)^2 / T^2, where the ratio
    bound is the sup of |w'/w| (valid for sign-definite couplings).  It is
    undefined for compact profiles, couplings of both signs, or T = 0.
    """
    gmax = envelope_sup(profile, law.max_modulus)
    D1 = 5.0 * gmax**2 + 1.0
    factor = spec.radius_a**2 / (1.0 - spec.mu1 / spec.mu2)
    lhs4 = factor * D1

    D2 = None
    sign_definite = law.lambda_minus >= 0 or law.lambda_plus <= 0
    ratio = profile.log_derivative_bound
    if math.isfinite(ratio) and sign_definite and spec.coupling_T > 0 and not law.degenerate:
        D2 = 6.0 * gmax**2 + 2.0 * ratio**2 / spec.coupling_T**2
    lhs6 = None if D2 is None else factor * D2

    upper4 = 1.0 if delta0 is None else delta0
    passes4 = lhs4 < upper4
    passes6 = lhs6 is not None and lhs6 < 1.0
    return ThinnessReport(
        D1=D1,
        D2=D2,
        lhs_d4=lhs4,
        lhs_d6=lhs6,
        delta0=delta0,
        admissible_d4=(lhs4, upper4) if passes4 else None,
        admissible_d6=(lhs6, 1.0) if passes6 else None,
        passes_d4=passes4,
        passes_d6=passes6,
    )
