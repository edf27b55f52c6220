"""Strict, versioned experiment configuration."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .cross_section import CrossSection
from .disorder import make_coupling_law, make_profile

SCHEMA_VERSION = 1
CHECKS = ("sandwich", "lifshits", "bottom", "van_hove")


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _take(section: dict, path, allowed, required=()):
    if not isinstance(section, dict):
        raise ConfigError(path, "expected a mapping")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    for key in required:
        if key not in section:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    return section


def _number(value, path, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if integer and int(value) != value:
        raise ConfigError(path, "must be an integer")
    if positive and value <= 0:
        raise ConfigError(path, "must be positive")
    if nonneg and value < 0:
        raise ConfigError(path, "must be nonnegative")
    return int(value) if integer else float(value)


_CS_KEYS = {
    "rectangle": ("width", "height"),
    "disc": ("radius",),
    "ellipse": ("a_semi", "b_semi"),
    "l_shape": ("arm", "thickness"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str
    cross_section: dict
    profile: dict
    law: dict
    ell: float
    h_s: float
    tail_tol: float
    energies: tuple
    reps: int
    epsilons: tuple = (0.0,)
    delta: float | None = None
    checks: dict = field(default_factory=dict)
    bottom: dict = field(default_factory=dict)
    lifshits: dict = field(default_factory=dict)
    van_hove_tol: float = 0.05
    c_slack: float = 1.0
    dof_cap: int = 5_000_000
    workers: int = 1
    version: int = SCHEMA_VERSION

    # -- derived objects

    def make_cross_section(self) -> CrossSection:
        d = dict(self.cross_section)
        kind = d.pop("kind")
        res = d.pop("resolution")
        offset = tuple(d.pop("offset", (0.0, 0.0)))
        dims = [d[k] for k in _CS_KEYS[kind]]
        return getattr(CrossSection, kind)(*dims, resolution=res, offset=offset)

    def make_profile(self):
        d = dict(self.profile)
        return make_profile(d.pop("kind"), **d)

    def make_law(self):
        d = dict(self.law)
        return make_coupling_law(d.pop("kind"), **d)

    @property
    def energy_grid(self):
        return np.asarray(self.energies, dtype=float)

    def check_enabled(self, name):
        return bool(self.checks.get(name, False))

    def to_dict(self):
        return asdict(self)

    def content(self):
        """Every field that determines the data; the output location does not."""
        out = self.to_dict()
        out.pop("output_dir")
        return out

    def canonical_json(self):
        return json.dumps(self.content(), sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def replace(self, **changes):
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig(**data)


def _energies(spec, path):
    if isinstance(spec, list) and spec and all(isinstance(v, dict) for v in spec):
        # union of several grids
        merged = np.unique(np.concatenate([_energies(v, f"{path}[{i}]") for i, v in enumerate(spec)]))
        return tuple(float(v) for v in merged)
    if isinstance(spec, list):
        vals = [_number(v, f"{path}[{i}]") for i, v in enumerate(spec)]
    elif not isinstance(spec, dict):
        raise ConfigError(path, "expected a list of energies or a grid mapping")
    else:
        _take(spec, path, ("start", "stop", "num", "spacing"), ("start", "stop", "num"))
        start = _number(spec["start"], f"{path}.start")
        stop = _number(spec["stop"], f"{path}.stop")
        num = _number(spec["num"], f"{path}.num", positive=True, integer=True)
        spacing = spec.get("spacing", "linear")
        if spacing == "linear":
            vals = np.linspace(start, stop, num).tolist()
        elif spacing == "log":
            if start <= 0:
                raise ConfigError(f"{path}.start", "log spacing needs a positive start")
            vals = np.logspace(np.log10(start), np.log10(stop), num).tolist()
        else:
            raise ConfigError(f"{path}.spacing", "must be 'linear' or 'log'")
    if not vals:
        raise ConfigError(path, "empty energy grid")
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise ConfigError(path, "energies must be sorted")
    return tuple(vals)


def validate(raw: dict) -> ExperimentConfig:
    """Validate a parsed config mapping; errors name the offending field path."""
    top = (
        "version", "seed", "output_dir", "cross_section", "profile", "law", "grids", "energies", "reps",
        "epsilons", "delta", "checks", "bottom", "lifshits", "van_hove_tol", "c_slack", "dof_cap", "workers",
    )
    _take(raw, "", top, ("version", "seed", "cross_section", "profile", "law", "grids", "energies", "reps"))
    version = raw["version"]
    if version != SCHEMA_VERSION:
        raise ConfigError("version", f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    seed = _number(raw["seed"], "seed", nonneg=True, integer=True)

    cs = dict(_take(raw["cross_section"], "cross_section",
                    ("kind", "resolution", "offset") + sum(_CS_KEYS.values(), ()), ("kind", "resolution")))
    kind = cs.get("kind")
    if kind not in _CS_KEYS:
        raise ConfigError("cross_section.kind", f"must be one of {sorted(_CS_KEYS)}")
    extra = set(cs) - {"kind", "resolution", "offset"} - set(_CS_KEYS[kind])
    if extra:
        raise ConfigError(f"cross_section.{sorted(extra)[0]}", f"not a parameter of {kind}")
    for key in _CS_KEYS[kind] + ("resolution",):
        if key not in cs:
            raise ConfigError(f"cross_section.{key}", "missing required key")
        cs[key] = _number(cs[key], f"cross_section.{key}", positive=True)
    if "offset" in cs:
        off = cs["offset"]
        if not (isinstance(off, list) and len(off) == 2):
            raise ConfigError("cross_section.offset", "expected a list of two numbers")
        cs["offset"] = [_number(v, f"cross_section.offset[{i}]") for i, v in enumerate(off)]

    prof = dict(raw["profile"])
    law = dict(raw["law"])
    for name, d, factory in (("profile", prof, make_profile), ("law", law, make_coupling_law)):
        if "kind" not in d:
            raise ConfigError(f"{name}.kind", "missing required key")
        params = {k: v for k, v in d.items() if k != "kind"}
        for k, v in params.items():
            _number(v, f"{name}.{k}")
        try:
            factory(d["kind"], **params)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(name, str(exc)) from None

    grids = _take(raw["grids"], "grids", ("ell", "h_s", "tail_tol"), ("ell", "h_s"))
    ell = _number(grids["ell"], "grids.ell", positive=True)
    h_s = _number(grids["h_s"], "grids.h_s", positive=True)
    ratio = ell / h_s
    if abs(ratio - round(ratio)) > 1e-9 * ratio:
        raise ConfigError("grids.h_s", "ell/h_s must be an integer")
    tail_tol = _number(grids.get("tail_tol", 1e-6), "grids.tail_tol", positive=True)

    reps = _number(raw["reps"], "reps", positive=True, integer=True)
    energies = _energies(raw["energies"], "energies")
    eps = raw.get("epsilons", [0.0])
    if not isinstance(eps, list):
        raise ConfigError("epsilons", "expected a list")
    epsilons = tuple(_number(v, f"epsilons[{i}]") for i, v in enumerate(eps))
    delta = raw.get("delta")
    if delta is not None:
        delta = _number(delta, "delta", positive=True)
        if delta >= 1:
            raise ConfigError("delta", "must lie in (0, 1)")

    checks = _take(raw.get("checks", {}), "checks", CHECKS)
    for k, v in checks.items():
        if not isinstance(v, bool):
            raise ConfigError(f"checks.{k}", "expected true or false")
    checks = {k: bool(checks.get(k, False)) for k in CHECKS}

    bottom = dict(_take(raw.get("bottom", {}), "bottom", ("ells", "reps", "h_s")))
    if "ells" in bottom:
        if not isinstance(bottom["ells"], list) or not bottom["ells"]:
            raise ConfigError("bottom.ells", "expected a nonempty list")
        bottom["ells"] = [_number(v, f"bottom.ells[{i}]", positive=True) for i, v in enumerate(bottom["ells"])]
    if "reps" in bottom:
        bottom["reps"] = _number(bottom["reps"], "bottom.reps", positive=True, integer=True)
    if "h_s" in bottom:
        bottom["h_s"] = _number(bottom["h_s"], "bottom.h_s", positive=True)

    lif = dict(_take(raw.get("lifshits", {}), "lifshits", ("window", "sigma0", "kappa_range", "min_r2")))
    if lif.get("window") is not None:
        w = lif["window"]
        if not (isinstance(w, list) and len(w) == 2):
            raise ConfigError("lifshits.window", "expected [E_min, E_max]")
        lif["window"] = [_number(v, f"lifshits.window[{i}]", nonneg=True) for i, v in enumerate(w)]
    if lif.get("sigma0") is not None:
        lif["sigma0"] = _number(lif["sigma0"], "lifshits.sigma0")
    if lif.get("kappa_range") is not None:
        k = lif["kappa_range"]
        if not (isinstance(k, list) and len(k) == 2):
            raise ConfigError("lifshits.kappa_range", "expected [low, high]")
        lif["kappa_range"] = [_number(v, f"lifshits.kappa_range[{i}]") for i, v in enumerate(k)]
    if "min_r2" in lif:
        lif["min_r2"] = _number(lif["min_r2"], "lifshits.min_r2", nonneg=True)

    return ExperimentConfig(
        seed=seed,
        output_dir=str(raw.get("output_dir", "twistwave_out")),
        cross_section=cs,
        profile=prof,
        law=law,
        ell=ell,
        h_s=h_s,
        tail_tol=tail_tol,
        energies=energies,
        reps=reps,
        epsilons=epsilons,
        delta=delta,
        checks=checks,
        bottom=bottom,
        lifshits=lif,
        van_hove_tol=_number(raw.get("van_hove_tol", 0.05), "van_hove_tol", positive=True),
        c_slack=_number(raw.get("c_slack", 1.0), "c_slack", nonneg=True),
        dof_cap=_number(raw.get("dof_cap", 5_000_000), "dof_cap", positive=True, integer=True),
        workers=_number(raw.get("workers", 1), "workers", positive=True, integer=True),
    )


def load_raw(path) -> dict:
    """Parse a YAML or JSON config file without validating it."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(str(path), f"cannot parse: {exc}") from None
    if raw is None:
        raise ConfigError(str(path), "empty config")
    return raw


def load_config(path) -> ExperimentConfig:
    return validate(load_raw(path))
