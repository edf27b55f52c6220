import json

import numpy as np
import pytest
import yaml

from twistwave.cli import main
from twistwave.config import ConfigError, load_config, validate
from twistwave.cross_section import CrossSection
from twistwave.disorder import make_coupling_law, make_profile, sample_twist
from twistwave.pipeline import export_tube_geometry, run_experiment, twist_angle

SMALL = {
    "version": 1,
    "seed": 5,
    "cross_section": {"kind": "rectangle", "width": 0.1, "height": 0.1, "resolution": 0.1 / 17},
    "profile": {"kind": "bump", "amplitude": 0.3, "half_cells": 0},
    "law": {"kind": "two_point", "v0": 0.0, "v1": 1.0, "prob": 0.5},
    "grids": {"ell": 4, "h_s": 0.2},
    "energies": {"start": 0.2, "stop": 4.0, "num": 5},
    "reps": 2,
    "checks": {"sandwich": True, "lifshits": False, "bottom": True},
    "bottom": {"ells": [2, 4], "reps": 2, "h_s": 0.25},
}


def write_cfg(tmp_path, raw, name="c.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


@pytest.mark.parametrize("patch, where", [
    ({"reps": 0}, "reps"),
    ({"colour": 1}, "colour"),
    ({"version": 2}, "version"),
    ({"grids": {"ell": 4, "h_s": -1}}, "grids.h_s"),
    ({"law": {"kind": "uniform", "lo": 0.5, "hi": 1.0}}, "law"),
])
def test_config_errors_name_the_field(patch, where):
    with pytest.raises(ConfigError) as err:
        validate({**SMALL, **patch})
    assert str(err.value).startswith(where)


def test_energy_union():
    cfg = validate({**SMALL, "energies": [{"start": 0.0, "stop": 1.0, "num": 3},
                                          {"start": 0.5, "stop": 2.0, "num": 4}]})
    np.testing.assert_allclose(cfg.energy_grid, [0.0, 0.5, 1.0, 1.5, 2.0])


def test_run_is_deterministic_and_location_free(tmp_path):
    a = validate({**SMALL, "output_dir": str(tmp_path / "a")})
    b = validate({**SMALL, "output_dir": str(tmp_path / "b")})
    assert a.digest() == b.digest()
    ma, ta = run_experiment(a)
    mb, tb = run_experiment(b)
    assert ma.files == mb.files
    for name in ta:
        if name != "manifest.json":
            assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()
    assert {"transverse.json", "thinness.json", "ids3d.csv", "plot.csv", "sandwich.json",
            "bottom.json", "config.json"} <= set(ta)
    assert ma.checks["lifshits"] == "skipped" and ma.checks["van_hove"] == "skipped"
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["exit_code"] == ma.exit_code


def test_cli_exit_codes(tmp_path, capsys):
    good = write_cfg(tmp_path, {**SMALL, "output_dir": str(tmp_path / "out"),
                                "checks": {"sandwich": False, "bottom": False}})
    assert main(["cross-section", str(good)]) == 0
    assert "mu" in json.loads(capsys.readouterr().out)
    bad = write_cfg(tmp_path, {**SMALL, "reps": 0}, "bad.yaml")
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    assert main(["ids3d", str(good), "--dof-cap", "10"]) == 3
    assert main(["ids1d", str(good), "--eps", "0", "0.5"]) == 0
    assert (tmp_path / "out" / "ids1d_eps_0.5.csv").exists()
    # a check that cannot pass: no exponent lies in an empty range
    fail = write_cfg(tmp_path, {**SMALL, "output_dir": str(tmp_path / "f"),
                                "lifshits": {"kappa_range": [5.0, 4.0]}}, "f.yaml")
    assert main(["lifshits", str(fail)]) == 1
    assert json.loads((tmp_path / "f" / "manifest.json").read_text())["checks"]["lifshits"] == "failed"


def test_straight_tube_geometry():
    cs = CrossSection.disc(0.5, resolution=0.05)
    zero = make_coupling_law("two_point", v0=0.0, v1=0.0, prob=0.5)
    f = sample_twist(make_profile("bump", amplitude=1.0), zero, 4.0, 0.25, seed=0)
    pts = export_tube_geometry(cs, f, theta0=0.0, samples=16)
    np.testing.assert_allclose(pts[:, 4], 0.0)
    np.testing.assert_allclose(np.hypot(pts[:, 1], pts[:, 2]), 0.5)


def test_constant_twist_gives_linear_angle():
    # overwrite a sampled field with a constant twist speed
    f = sample_twist(make_profile("bump", amplitude=1.0), make_coupling_law("uniform", lo=-1, hi=1),
                     6.0, 0.01, seed=3)
    f.gamma[:] = 2.0
    f.gamma_mid[:] = 2.0
    s, theta = twist_angle(f, theta0=0.3)
    np.testing.assert_allclose(theta, 0.3 + 2.0 * s, atol=1e-12)
    pts = export_tube_geometry(CrossSection.disc(1.0, resolution=0.1), f, 0.3, 8)
    np.testing.assert_allclose(np.hypot(pts[:, 1], pts[:, 2]), 1.0)


def test_shipped_configs_validate():
    from pathlib import Path
    for path in sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.yaml")):
        cfg = load_config(path)
        assert cfg.reps >= 1
