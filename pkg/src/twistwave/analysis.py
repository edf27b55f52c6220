"""Sandwich checks, van Hove reference, Lifshits fits and the spectrum bottom."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as sla
from scipy import stats

from .cross_section import CrossSection, TransverseSpectrum, solve_transverse
from .curves import IdsCurve
from .disorder import CouplingLaw, SingleSiteProfile, ThinnessReport, sample_twist
from .operators_1d import free_lowest_dirichlet
from .operators_3d import BLOCK_TRANSVERSE_LIMIT, BlockCholesky, assemble_3d, count_below_3d

__all__ = [
    "IdsCurve", "SandwichReport", "LifshitsFit", "BottomReport", "sandwich_verify", "upper_energy_grid",
    "energy_window", "van_hove_reference", "lifshits_fit", "estimate_sigma0", "default_window",
    "lowest_eigenvalue", "spectrum_bottom_check", "write_plot_csv", "plot_csv_text", "VanHoveReport",
    "van_hove_check", "curve_agreement",
]

DEFAULT_C_SLACK = 1.0  # order-one constant; the gamma = 0 calibration gives 0


# -- sandwich -------------------------------------------------------------------


def energy_window(spec: TransverseSpectrum, D, delta):
    """Upper end of the energy window ``mu2 (1 - D a^2 / delta) - mu1``."""
    return spec.mu2 * (1.0 - D * spec.radius_a**2 / delta) - spec.mu1


def upper_energy_grid(energies, delta):
    return np.asarray(energies, dtype=float) / (1.0 - delta)


@dataclass
class SandwichReport:
    delta: float | None
    admissible: dict
    window_upper: float | None
    energies: list
    slack: list
    lower_violations: list = field(default_factory=list)
    upper_violations: list = field(default_factory=list)
    realization_violations: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    c_slack: float = DEFAULT_C_SLACK

    @property
    def passed(self):
        return all(self.checks.values())

    def to_dict(self):
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _discretization_slack(curve: IdsCurve, energies, c_slack):
    h_t = curve.metadata.get("h_t", 0.0)
    h_s = curve.metadata.get("h_s", 0.0)
    return c_slack * (h_t**2 + h_s**2) * (1.0 + np.abs(energies))


def _same_realizations(a: IdsCurve, b: IdsCurve):
    return a.reps == b.reps and a.ell == b.ell and str(a.metadata.get("seed")) == str(b.metadata.get("seed"))


def sandwich_verify(curve3d: IdsCurve, curves1d: dict, spec: TransverseSpectrum, thinness: ThinnessReport,
                    delta=None, checks=("lower", "upper"), c_slack=DEFAULT_C_SLACK,
                    realization_allowance=0) -> SandwichReport:
    """Check the lower bound and the thinness upper bounds on a common grid.

    ``curve3d`` holds energies as offsets above ``mu1^h``. ``curves1d`` maps
    eps to a 1D curve: eps = 0 on the same grid (lower bound) and, for the
    upper bound, eps = delta/(1-delta) on the grid ``E/(1-delta)``. The
    ``upper_zero`` check is the eps = 0 upper bound under the second thinness
    condition and expects the eps = 0 curve on that scaled grid under key
    ``("scaled", 0.0)``.

    Slack is ``c_slack (h_t^2 + h_s^2)(1 + E)`` plus twice the combined
    standard error. When the 1D and 3D curves come from the same
    realizations, each realization is also compared in integer counts with
    ``realization_allowance`` eigenvalues of tolerance on top of the
    discretization slack.
    """
    E = curve3d.energies
    disc = _discretization_slack(curve3d, E, c_slack)
    report = SandwichReport(delta, thinness.to_dict(), None, E.tolist(), [], c_slack=c_slack)
    in_window = np.ones(E.size, dtype=bool)

    def compare(lower: IdsCurve, upper: IdsCurve, mask, name):
        se = np.sqrt(lower.nu_stderr**2 + upper.nu_stderr**2)
        slack = disc + 2.0 * se
        gap = lower.nu_mean - upper.nu_mean - slack
        bad = [(float(E[i]), float(gap[i])) for i in np.nonzero((gap > 0) & mask)[0]]
        per = []
        if _same_realizations(lower, upper):
            allow = lower.ell * disc + realization_allowance
            diff = lower.counts - upper.counts - allow[None, :]
            for r, i in zip(*np.nonzero((diff > 0) & mask[None, :])):
                per.append((int(r), float(E[i]), int(lower.counts[r, i] - upper.counts[r, i])))
        report.realization_violations[name] = per
        return bad, per, slack

    if "lower" in checks:
        low = curves1d.get(0.0)
        if low is None or not np.allclose(low.energies, E, rtol=1e-12, atol=0):
            raise ValueError("lower bound needs the eps = 0 curve on the 3D energy grid")
        bad, per, slack = compare(low, curve3d, E > -np.inf, "lower")
        report.lower_violations = bad
        report.checks["lower"] = not bad and not per
        report.slack = slack.tolist()

    upper_checks = [c for c in checks if c in ("upper", "upper_zero")]
    for name in upper_checks:
        if delta is None:
            raise ValueError("upper bounds need delta")
        if name == "upper":
            if not thinness.passes_d4 or thinness.admissible_d4 is None:
                raise ValueError("the first thinness condition fails; the upper bound is not available")
            lo, hi = thinness.admissible_d4
            D = thinness.D1
            key = delta / (1.0 - delta)
        else:
            if not thinness.passes_d6 or thinness.admissible_d6 is None:
                raise ValueError("the second thinness condition fails; the eps = 0 upper bound is not available")
            lo, hi = thinness.admissible_d6
            D = thinness.D2
            key = ("scaled", 0.0)
        if not lo < delta < hi:
            raise ValueError(f"delta = {delta} lies outside the admissible interval ({lo}, {hi})")
        top = energy_window(spec, D, delta)
        report.window_upper = float(top)
        in_window = (E > 0) & (E < top)
        if not np.any(in_window):
            raise ValueError(f"empty energy window (0, {top}) on the given grid")
        up = curves1d.get(key)
        if up is None or not np.allclose(up.energies, upper_energy_grid(E, delta), rtol=1e-12, atol=0):
            raise ValueError(f"upper bound needs the curve {key!r} on the grid E/(1-delta)")
        bad, per, slack = compare(curve3d, up, in_window, name)
        report.upper_violations += [(name, e, g) for e, g in bad]
        report.checks[name] = not bad and not per
        if not report.slack:
            report.slack = slack.tolist()
    return report


def curve_agreement(a: IdsCurve, b: IdsCurve, c_slack=DEFAULT_C_SLACK):
    """Energies where two curves differ by more than discretization slack plus two standard errors.

    Returns ``(violations, slack)``; ``violations`` lists ``(E, |difference|, slack)``.
    """
    if not np.allclose(a.energies, b.energies, rtol=1e-12, atol=0):
        raise ValueError("curves must share one energy grid")
    se = np.sqrt(a.nu_stderr**2 + b.nu_stderr**2)
    slack = _discretization_slack(a, a.energies, c_slack) + 2.0 * se
    diff = np.abs(a.nu_mean - b.nu_mean)
    bad = [(float(a.energies[i]), float(diff[i]), float(slack[i])) for i in np.nonzero(diff > slack)[0]]
    return bad, slack


# -- van Hove -------------------------------------------------------------------


def van_hove_reference(spec: TransverseSpectrum | np.ndarray, E):
    """(1/pi) sum_j (E - mu_j)_+^{1/2} over the computed transverse modes."""
    mu = np.asarray(spec.mu if isinstance(spec, TransverseSpectrum) else spec, dtype=float)
    E_arr = np.asarray(E, dtype=float)
    if np.any(E_arr > mu[-1]):
        raise ValueError(
            f"energy {float(E_arr.max())} exceeds the highest computed mode {mu[-1]}; request more modes"
        )
    val = np.sqrt(np.clip(E_arr[..., None] - mu, 0.0, None)).sum(axis=-1) / np.pi
    return float(val) if np.ndim(E) == 0 else val


# -- Lifshits fits --------------------------------------------------------------


@dataclass
class VanHoveReport:
    energies: list
    measured: list
    reference: list
    rel_error: list
    max_rel_error: float
    tol: float

    @property
    def passed(self):
        return self.max_rel_error < self.tol

    def to_dict(self):
        out = asdict(self)
        out["passed"] = self.passed
        return out


def van_hove_check(curve3d: IdsCurve, spec: TransverseSpectrum | np.ndarray, window=(0.3, 3.0),
                   tol=0.05) -> VanHoveReport:
    """Relative deviation of the 3D curve from the square-root reference inside ``window``.

    Energies are offsets above ``mu1``, so the reference uses the shifted
    thresholds ``mu_j - mu1``.
    """
    E = curve3d.energies
    use = (E >= window[0]) & (E <= window[1])
    if not np.any(use):
        raise ValueError(f"no grid energy inside the window {window}")
    mu = spec.mu - spec.mu1 if isinstance(spec, TransverseSpectrum) else np.asarray(spec, dtype=float)
    ref = van_hove_reference(mu, E[use])
    got = curve3d.nu_mean[use]
    rel = np.abs(got - ref) / ref
    return VanHoveReport(E[use].tolist(), got.tolist(), ref.tolist(), rel.tolist(), float(rel.max()), tol)


@dataclass
class LifshitsFit:
    kappa_hat: float | None
    kappa_stderr: float | None
    window: tuple
    r_squared: float | None
    points_used: int
    flag: str
    sigma0: float | None
    power_exponent: float | None = None
    power_r_squared: float | None = None

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def estimate_sigma0(energies, nu, floor=0.0):
    hit = np.nonzero(np.asarray(nu) > floor)[0]
    return float(energies[hit[0]]) if hit.size else None


def default_window(energies, nu, sigma0, nu_top=0.2):
    """From the second grid point above sigma0 to where nu first reaches ``nu_top``."""
    above = np.nonzero(energies > sigma0)[0]
    if above.size < 2:
        return None
    lo = float(energies[above[1]] - sigma0)
    reach = np.nonzero((energies > sigma0) & (nu >= nu_top))[0]
    hi = float(energies[reach[0]] - sigma0) if reach.size else float(energies[-1] - sigma0)
    return (lo, hi) if hi > lo else None


def lifshits_fit(curve, window=None, sigma0=None, nu=None, min_points=5, margin=0.05,
                 nu_top=0.2, min_count=10) -> LifshitsFit:
    """Fit ``ln|ln nu(sigma0 + E)|`` against ``ln E``; kappa_hat is minus the slope.

    ``curve`` is an :class:`IdsCurve` or an energy array (then ``nu`` gives
    the values). ``sigma0`` defaults to the smallest grid energy with a
    nonzero estimate. The fit is flagged ``van_hove_like`` when a plain power
    law ``ln nu`` vs ``ln E`` has exponent within 0.1 of 1/2, fits better than
    the double-log model and leaves at most ``margin`` of the variance
    unexplained.

    For an :class:`IdsCurve`, energies whose pooled count over all
    realizations is below ``min_count`` are left out of the fit: a handful
    of eigenvalues carries a Poisson error too large for a log-log slope.
    """
    reliable = None
    if isinstance(curve, IdsCurve):
        energies, values = curve.energies, curve.nu_mean
        reliable = curve.counts.sum(axis=0) >= min_count
    else:
        energies, values = np.asarray(curve, dtype=float), np.asarray(nu, dtype=float)
    if sigma0 is None:
        sigma0 = estimate_sigma0(energies, values)
    if sigma0 is None:
        return LifshitsFit(None, None, (None, None), None, 0, "insufficient_decay", None)
    if window is None:
        window = default_window(energies, values, sigma0, nu_top)
        if window is None:
            return LifshitsFit(None, None, (None, None), None, 0, "insufficient_decay", sigma0)
    lo, hi = window
    x = energies - sigma0
    use = (x >= lo) & (x <= hi) & (x > 0) & (values > 0) & (values < 1)
    if reliable is not None:
        use &= reliable
    n = int(use.sum())
    if n < min_points:
        return LifshitsFit(None, None, tuple(window), None, n, "insufficient_decay", sigma0)
    lx = np.log(x[use])
    dbl = stats.linregress(lx, np.log(np.abs(np.log(values[use]))))
    pw = stats.linregress(lx, np.log(values[use]))
    r2, r2p = dbl.rvalue**2, pw.rvalue**2
    power_like = abs(pw.slope - 0.5) <= 0.1 and r2p > r2 and 1.0 - r2p <= margin
    flag = "van_hove_like" if power_like else "lifshits_tail"
    return LifshitsFit(float(-dbl.slope), float(dbl.stderr), (float(lo), float(hi)), float(r2), n, flag,
                       float(sigma0), float(pw.slope), float(r2p))


# -- spectrum bottom ------------------------------------------------------------


@dataclass
class BottomReport:
    mu1_h: float
    ells: list
    lambda_min: list  # per ell, per rep
    min_gap: list
    lower_bound_ok: bool
    monotone: bool
    strictly_decreasing: bool
    tol: float

    @property
    def passed(self):
        return self.lower_bound_ok and self.monotone

    def to_dict(self):
        out = asdict(self)
        out["passed"] = self.passed
        return out


def lowest_eigenvalue(op, certify=True, rel=1e-9):
    """Lowest eigenvalue by shift-invert Lanczos, bracketed by two inertia counts."""
    A = op.matrix
    if op.separable:
        return float(op.transverse_eigenvalues()[0] + free_lowest_dirichlet(op.ell, op.h_s))
    sigma = op.mu1 - 1e-6 * max(1.0, abs(op.mu1))  # the form puts the spectrum above mu1^h
    if A.shape[0] <= 1500:
        lam = float(np.linalg.eigvalsh(A.toarray())[0])
    elif op.n_transverse <= BLOCK_TRANSVERSE_LIMIT:
        fac = BlockCholesky(op, sigma)
        n = A.shape[0]
        inv = sla.LinearOperator((n, n), matvec=fac.solve, dtype=float)
        lam = float(sla.eigsh(A, k=1, sigma=sigma, which="LM", OPinv=inv, tol=1e-13, v0=np.ones(n),
                              return_eigenvectors=False)[0])
    else:
        lam = float(sla.eigsh(A, k=1, sigma=sigma, which="LM", tol=1e-13, v0=np.ones(A.shape[0]),
                              return_eigenvectors=False)[0])
    if certify:
        width = rel * max(1.0, abs(lam))
        below = count_below_3d(op, lam - width).count
        upto = count_below_3d(op, lam + width).count
        if below != 0 or upto < 1:
            raise RuntimeError(f"lowest eigenvalue {lam} failed the inertia bracket ({below}, {upto})")
    return lam


def spectrum_bottom_check(cs: CrossSection, profile: SingleSiteProfile, law: CouplingLaw, ell_list, reps, seed,
                          h_s=0.25, spectrum: TransverseSpectrum | None = None, tol=1e-10,
                          tail_tol=1e-6) -> BottomReport:
    """Lowest eigenvalue per realization for growing boxes.

    Realization ``r`` shares its couplings across all box lengths, so the
    boxes are nested and the minimum over realizations can only decrease.
    """
    if spectrum is None:
        spectrum = solve_transverse(cs)
    mu1 = spectrum.mu1
    lams = []
    for ell in ell_list:
        row = []
        for r in range(reps):
            f = sample_twist(profile, law, ell, h_s, seed, rep=r, tail_tol=tail_tol)
            row.append(lowest_eigenvalue(assemble_3d(cs, f, spectrum)))
        lams.append(row)
    gaps = [min(row) - mu1 for row in lams]
    lower_ok = all(v >= mu1 - tol for row in lams for v in row)
    mono = all(b <= a for a, b in zip(gaps, gaps[1:]))
    strict = all(b < a for a, b in zip(gaps, gaps[1:]))
    return BottomReport(mu1, list(ell_list), lams, gaps, lower_ok, mono, strict, tol)


# -- plot data ------------------------------------------------------------------


def plot_csv_text(curve3d: IdsCurve, lower: IdsCurve | None, upper: IdsCurve | None,
                  spec: TransverseSpectrum):
    """Plot-ready columns: the 1D lower curve, the 3D curve, the 1D upper curve and the reference."""
    E = curve3d.energies
    try:
        ref = van_hove_reference(spec.mu - spec.mu1, E)
    except ValueError:
        ref = np.full(E.size, np.nan)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["E", "nu_lower", "N", "nu_upper", "van_hove_ref"])
    for i, e in enumerate(E):
        lo = lower.nu_mean[i] if lower is not None else float("nan")
        up = upper.nu_mean[i] if upper is not None else float("nan")
        w.writerow([repr(float(e)), repr(float(lo)), repr(float(curve3d.nu_mean[i])), repr(float(up)),
                    repr(float(ref[i]))])
    return buf.getvalue()


def write_plot_csv(path, curve3d: IdsCurve, lower: IdsCurve | None, upper: IdsCurve | None,
                   spec: TransverseSpectrum):
    with open(path, "w", newline="") as fh:
        fh.write(plot_csv_text(curve3d, lower, upper, spec))
