"""End-to-end experiment runs and tube geometry export."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import __version__
from .analysis import (
    lifshits_fit,
    plot_csv_text,
    sandwich_verify,
    spectrum_bottom_check,
    upper_energy_grid,
    van_hove_check,
)
from .config import CHECKS, ExperimentConfig
from .cross_section import CrossSection, solve_transverse
from .disorder import TwistField, sample_twist, thinness_constants
from .operators_1d import critical_epsilon, ids_1d
from .operators_3d import BudgetExceeded, ids_3d

PASSED, FAILED, SKIPPED = "passed", "failed", "skipped"


def _plain(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(data):
    """Deterministic JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True, default=_plain) + "\n"


@dataclass
class RunManifest:
    config_digest: str
    tool_version: str
    output_dir: str
    timings: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)  # name -> sha256 of the bytes written
    checks: dict = field(default_factory=dict)  # name -> passed / failed / skipped
    notes: list = field(default_factory=list)

    @property
    def failed(self):
        return sorted(k for k, v in self.checks.items() if v == FAILED)

    @property
    def exit_code(self):
        return 1 if self.failed else 0

    def to_dict(self):
        out = asdict(self)
        out["exit_code"] = self.exit_code
        return out


def transverse_spectrum_for(cs: CrossSection, e_max=None):
    """Solve the cross-section, adding modes until ``mu[-1] - mu1`` exceeds ``e_max``."""
    k = 2
    while True:
        spec = solve_transverse(cs, k)
        if e_max is None or spec.mu[-1] - spec.mu1 > e_max:
            return spec
        if k >= spec.grid.size:
            return spec
        k = min(2 * k, spec.grid.size)


def _eps_tag(eps):
    return format(float(eps), ".6g")


def _stage(manifest, name):
    class _Timer:
        def __enter__(self):
            self.t0 = time.perf_counter()

        def __exit__(self, *exc):
            manifest.timings[name] = round(time.perf_counter() - self.t0, 3)
            return False

    return _Timer()


def _check_dof(n_transverse, ell, h_s, cap, what):
    dof = n_transverse * int(round(ell / h_s))
    if dof > cap:
        raise BudgetExceeded(f"{what}: {dof} unknowns exceed the cap of {cap}")
    return dof


def run_experiment(config: ExperimentConfig, write=True) -> tuple[RunManifest, dict]:
    """Run every stage of ``config`` and emit its artifacts.

    Returns the manifest and the emitted texts keyed by file name. Stages
    pass values only; all files are written at the end, in one thread.
    The 3D ensemble runs when a sandwich or van Hove check needs it.
    """
    out = {}
    manifest = RunManifest(config.digest(), __version__, str(config.output_dir))
    manifest.checks = {name: SKIPPED for name in CHECKS}
    cs = config.make_cross_section()
    profile = config.make_profile()
    law = config.make_law()
    E = config.energy_grid
    want_vh = config.check_enabled("van_hove")
    want_sw = config.check_enabled("sandwich")
    need_3d = want_vh or want_sw

    with _stage(manifest, "cross_section"):
        spec = transverse_spectrum_for(cs, float(E.max()) if want_vh else None)
    out["transverse.json"] = dumps(spec.to_dict())
    T = spec.coupling_T

    with _stage(manifest, "thinness"):
        try:
            crit = critical_epsilon(profile, law, T)
            eps0 = crit.value
            crit_info = crit.to_dict()
        except ValueError as exc:
            eps0, crit_info = None, {"eps0": None, "reason": str(exc)}
            manifest.notes.append(f"critical epsilon unavailable: {exc}")
        delta0 = None if eps0 is None else (1.0 if math.isinf(eps0) else eps0 / (1.0 + eps0))
        thin = thinness_constants(profile, law, spec, delta0)
        delta = config.delta
        if delta is None and thin.admissible_d4 is not None:
            delta = 0.5 * (thin.admissible_d4[0] + thin.admissible_d4[1])
    out["thinness.json"] = dumps({"thinness": thin.to_dict(), "critical_epsilon": crit_info, "delta": delta})

    kw = dict(ell=config.ell, h_s=config.h_s, reps=config.reps, seed=config.seed, workers=config.workers,
              tail_tol=config.tail_tol)
    curves1d = {}
    with _stage(manifest, "ids1d"):
        for eps in config.epsilons:
            curves1d[float(eps)] = ids_1d(profile, law, T, eps, E_grid=E, **kw)
        upper_checks = []
        if want_sw:
            if 0.0 not in curves1d:
                curves1d[0.0] = ids_1d(profile, law, T, 0.0, E_grid=E, **kw)
            if delta is not None and thin.passes_d4:
                upper_checks.append("upper")
                eps_u = delta / (1.0 - delta)
                curves1d[eps_u] = ids_1d(profile, law, T, eps_u, E_grid=upper_energy_grid(E, delta), **kw)
            if delta is not None and thin.passes_d6:
                upper_checks.append("upper_zero")
                curves1d[("scaled", 0.0)] = ids_1d(profile, law, T, 0.0, E_grid=upper_energy_grid(E, delta), **kw)
            if not upper_checks:
                manifest.notes.append("no thinness condition holds: only the lower sandwich bound is checked")
    for key, curve in curves1d.items():
        name = f"ids1d_scaled_eps_{_eps_tag(key[1])}.csv" if isinstance(key, tuple) else (
            f"ids1d_eps_{_eps_tag(key)}.csv")
        out[name] = curve.csv_text()

    curve3d = None
    if need_3d:
        with _stage(manifest, "ids3d"):
            _check_dof(spec.grid.size, config.ell, config.h_s, config.dof_cap, "3D operator")
            curve3d = ids_3d(cs, profile, law, spectrum=spec, E_offsets=E, **kw)
        out["ids3d.csv"] = curve3d.csv_text()
        lower = curves1d.get(0.0)
        upper = curves1d.get(delta / (1.0 - delta)) if delta is not None and "upper" in upper_checks else None
        out["plot.csv"] = plot_csv_text(curve3d, lower, upper, spec)
    else:
        manifest.notes.append("3D ensemble not run: neither the sandwich nor the van Hove check is enabled")

    with _stage(manifest, "checks"):
        if want_sw:
            rep = sandwich_verify(curve3d, curves1d, spec, thin, delta=delta,
                                  checks=("lower", *upper_checks), c_slack=config.c_slack)
            out["sandwich.json"] = dumps(rep.to_dict())
            manifest.checks["sandwich"] = PASSED if rep.passed else FAILED
        if want_vh:
            rep = van_hove_check(curve3d, spec, tol=config.van_hove_tol)
            out["van_hove.json"] = dumps(rep.to_dict())
            manifest.checks["van_hove"] = PASSED if rep.passed else FAILED
        if config.check_enabled("lifshits"):
            lif = config.lifshits
            curve = curves1d[float(config.epsilons[0])]
            fit = lifshits_fit(curve, window=lif.get("window"), sigma0=lif.get("sigma0"))
            ok = fit.kappa_hat is not None and fit.r_squared >= lif.get("min_r2", 0.9)
            if ok and lif.get("kappa_range") is not None:
                lo, hi = lif["kappa_range"]
                ok = lo <= fit.kappa_hat <= hi
            # the tail asymptotics assume w >= 0 and lambda_minus = 0; otherwise no comparison flag
            applies = bool(profile.nonnegative and law.lambda_minus == 0)
            kappa_law = law.concentration_kappa if law.concentration_kappa is not None else "unknown"
            out["lifshits.json"] = dumps({**fit.to_dict(), "passed": bool(ok), "theorem_applies": applies,
                                          "law_kappa": kappa_law if applies else None})
            manifest.checks["lifshits"] = PASSED if ok else FAILED
        if config.check_enabled("bottom"):
            b = config.bottom
            ells = b.get("ells", [20.0, 40.0, 80.0])
            h_s = b.get("h_s", 0.25)
            _check_dof(spec.grid.size, max(ells), h_s, config.dof_cap, "bottom check")
            rep = spectrum_bottom_check(cs, profile, law, ells, b.get("reps", 32), config.seed, h_s=h_s,
                                        spectrum=spec, tail_tol=config.tail_tol)
            out["bottom.json"] = dumps(rep.to_dict())
            manifest.checks["bottom"] = PASSED if rep.passed else FAILED

    out["config.json"] = dumps(config.content())
    manifest.files = {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(out.items())}
    out["manifest.json"] = dumps(manifest.to_dict())
    if write:
        emit(config.output_dir, out)
    return manifest, out


def emit(output_dir, texts: dict):
    """Write all artifacts; called once, after every stage has finished."""
    root = Path(output_dir)
    root.mkdir(parents=True, exist_ok=True)
    for name in sorted(texts):
        with open(root / name, "w", newline="") as fh:
            fh.write(texts[name])


# -- geometry -------------------------------------------------------------------


def twist_angle(field: TwistField, theta0=0.0):
    """theta on the merged grid of cell centers and edges, with theta(0) = theta0.

    The twist speed is integrated with the trapezoid rule from ``s = 0``.
    """
    s = np.concatenate([field.s, field.s_mid])
    g = np.concatenate([field.gamma, field.gamma_mid])
    order = np.argsort(s, kind="stable")
    s, g = s[order], g[order]
    keep = np.concatenate([[True], np.diff(s) > 0])
    s, g = s[keep], g[keep]
    prim = cumulative_trapezoid(g, s, initial=0.0)
    return s, theta0 + prim - np.interp(0.0, s, prim)


def export_tube_geometry(cs: CrossSection, field: TwistField, theta0=0.0, samples=64):
    """Boundary point cloud of the twisted tube.

    Returns rows ``(slice, x1, x2, x3, theta)``: the cross-section boundary
    rotated by ``theta(x3)`` at every longitudinal sample.
    """
    s, theta = twist_angle(field, theta0)
    pts = cs.boundary_points(samples)
    c, si = np.cos(theta)[:, None], np.sin(theta)[:, None]
    x1 = c * pts[:, 0] - si * pts[:, 1]
    x2 = si * pts[:, 0] + c * pts[:, 1]
    m = s.size
    return np.column_stack([
        np.repeat(np.arange(m), samples), x1.ravel(), x2.ravel(), np.repeat(s, samples), np.repeat(theta, samples),
    ])


def tube_csv_text(points):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slice", "x1", "x2", "x3", "theta"])
    for row in points:
        w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
    return buf.getvalue()


def tube_from_config(config: ExperimentConfig, rep=0, theta0=0.0, samples=64):
    field = sample_twist(config.make_profile(), config.make_law(), config.ell, config.h_s, config.seed, rep=rep,
                         tail_tol=config.tail_tol)
    return export_tube_geometry(config.make_cross_section(), field, theta0, samples)
