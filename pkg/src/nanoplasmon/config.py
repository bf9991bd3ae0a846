"""Scenario configuration files (TOML) and the bundled presets.

A config names a ``scenario`` and carries one section per ingredient.
Every key has a documented default (see :data:`SCHEMA`); unknown keys and
wrong types raise :class:`ConfigError` naming the dotted key path.
"""
from __future__ import annotations

import copy
import sys
from importlib import resources
from pathlib import Path

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCENARIOS = ("mie", "mirror-scan", "pair-scan", "fdtd", "fit")

_NUM = (int, float)
_LIST = (list,)

# section -> key -> (allowed types, default). ``None`` default means optional.
SCHEMA = {
    "": {
        "scenario": ((str,), None),
        "name": ((str,), None),
        "description": ((str,), ""),
    },
    "material": {
        # johnson-christy | table | drude-lorentz-fit | constant
        "model": ((str,), "johnson-christy"),
        "file": ((str,), None),
        "eps": (_NUM, None),
        "fit_window": (_LIST, [450.0, 750.0]),
    },
    "environment": {
        "eps_m": (_NUM, None),
        "index": (_NUM, None),
    },
    "wavelengths": {
        "start": (_NUM, 450.0),
        "stop": (_NUM, 750.0),
        "step": (_NUM, 1.0),
    },
    "mie": {
        "diameter": (_NUM, 100.0),
        "effective": ((bool,), True),
        "quasistatic": ((bool,), False),
        "near_field": ((bool,), False),
        "far_field": ((bool,), False),
        "map_wavelength": (_NUM, None),
        "map_plane": (_LIST, ["x", "z"]),
        "map_spacing": (_NUM, None),
        "map_half_width": (_NUM, None),
    },
    "mirror": {
        # image | between-mirrors
        "model": ((str,), "between-mirrors"),
        "diameter": (_NUM, 100.0),
        "eps_lower": (_NUM, 2.25),
        "eps_upper": (_NUM, 2.25),
        "fixed_gap": (_NUM, 0.0),
        "gap_start": (_NUM, 5.0),
        "gap_stop": (_NUM, 1500.0),
        "gap_step": (_NUM, 5.0),
        "orientation": ((str,), "parallel"),
        "measured": ((str,), None),
        "period_bounds": (_LIST, None),
    },
    "pair": {
        # dipole | fdtd
        "model": ((str,), "dipole"),
        "diameter": (_NUM, 100.0),
        # head-to-tail (polarization along the scan axis) | side-by-side
        "configuration": ((str,), "head-to-tail"),
        "scan_axis": (_LIST, [1.0, 0.0, 0.0]),
        "direction": (_LIST, [0.0, 0.0, -1.0]),
        "eps_contact": (_NUM, 1.3924),
        "eps_lifted": (_NUM, 1.21),
        "lift_threshold": (_NUM, 5.0),
        "lift": ((bool,), True),
        "reference_lambda": (_NUM, None),
    },
    "trajectory": {
        "file": ((str,), None),
        "vertical_offset": (_NUM, 15.0),
        "pixel_size": (_NUM, None),
        # synthetic sphere-over-sphere topography when no file is given
        "start": (_NUM, -300.0),
        "stop": (_NUM, 300.0),
        "step": (_NUM, 25.0),
        "broadening": (_NUM, 15.0),
        "flat_height": (_NUM, None),
    },
    "fdtd": {
        "cell": (_NUM, 4.0),
        "pml": ((int,), 10),
        "courant": (_NUM, 0.5),
        "precision": ((str,), "float32"),
        "fill": ((str,), "majority"),
        "decay": (_NUM, 1e-8),
        "max_steps": ((int,), 60000),
        "memory_budget_gib": (_NUM, 4.0),
        "diameter": (_NUM, 100.0),
        "centers": (_LIST, [[0.0, 0.0, 0.0]]),
        "direction": (_LIST, [0.0, 0.0, 1.0]),
        "polarization": (_LIST, [1.0, 0.0, 0.0]),
        "pulse_center": (_NUM, 600.0),
        "pulse_bandwidth": (_NUM, 300.0),
        "compare_mie": ((bool,), True),
    },
    "fit": {
        "reference": ((str,), None),
        "spectra": (_LIST, []),
        "separations": (_LIST, []),
        "shift_curve": ((str,), None),
        "model_curve": ((str,), None),
        "window": (_LIST, None),
        "reference_lambda": (_NUM, None),
        "separation_kind": ((str,), "projected"),
    },
}


def _check_type(path, value, types):
    if bool in types:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, types):
        names = " or ".join(t.__name__ for t in types)
        raise ConfigError(path, f"expected {names}, got {type(value).__name__}")
    return float(value) if types == _NUM else value


def validate(raw, source="<config>"):
    """Check ``raw`` against :data:`SCHEMA` and fill in defaults.

    Returns a new nested dict with every section present.
    """
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be a table")
    out = {}
    for section, keys in SCHEMA.items():
        body = raw if section == "" else raw.get(section, {})
        if section and not isinstance(body, dict):
            raise ConfigError(section, "expected a table")
        resolved = {}
        for key, (types, default) in keys.items():
            path = f"{section}.{key}" if section else key
            if key in body:
                resolved[key] = _check_type(path, body[key], types)
            else:
                resolved[key] = copy.deepcopy(default)
        if section:
            for key in body:
                if key not in keys:
                    raise ConfigError(f"{section}.{key}", "unknown key")
            out[section] = resolved
        else:
            out.update(resolved)
    for key, value in raw.items():
        if key not in SCHEMA and key not in SCHEMA[""]:
            raise ConfigError(key, "unknown key" if not isinstance(value, dict) else "unknown section")
    if out["scenario"] is not None and out["scenario"] not in SCENARIOS:
        raise ConfigError("scenario", f"must be one of {', '.join(SCENARIOS)}")
    _check_semantics(out)
    out["_source"] = str(source)
    return out


def _vec3(cfg, path):
    section, key = path.split(".")
    v = cfg[section][key]
    if len(v) != 3 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(path, "expected a list of 3 numbers")
    return [float(x) for x in v]


def _check_semantics(cfg):
    mat = cfg["material"]
    models = ("johnson-christy", "table", "drude-lorentz-fit", "constant")
    if mat["model"] not in models:
        raise ConfigError("material.model", f"must be one of {', '.join(models)}")
    if mat["model"] == "table" and not mat["file"]:
        raise ConfigError("material.file", "required when material.model = 'table'")
    if mat["model"] == "constant" and mat["eps"] is None:
        raise ConfigError("material.eps", "required when material.model = 'constant'")
    if len(mat["fit_window"]) != 2:
        raise ConfigError("material.fit_window", "expected [start, stop]")
    env = cfg["environment"]
    if env["eps_m"] is not None and env["index"] is not None:
        raise ConfigError("environment.index", "give either eps_m or index, not both")
    for key in ("eps_m", "index"):
        if env[key] is not None and not env[key] > 0:
            raise ConfigError(f"environment.{key}", "must be positive")
    wl = cfg["wavelengths"]
    if not (0 < wl["start"] < wl["stop"]) or not wl["step"] > 0:
        raise ConfigError("wavelengths", "need 0 < start < stop and step > 0")
    if cfg["mirror"]["model"] not in ("image", "between-mirrors"):
        raise ConfigError("mirror.model", "must be 'image' or 'between-mirrors'")
    if cfg["mirror"]["orientation"] not in ("parallel", "perpendicular"):
        raise ConfigError("mirror.orientation", "must be 'parallel' or 'perpendicular'")
    pair = cfg["pair"]
    if pair["model"] not in ("dipole", "fdtd"):
        raise ConfigError("pair.model", "must be 'dipole' or 'fdtd'")
    if pair["configuration"] not in ("head-to-tail", "side-by-side"):
        raise ConfigError("pair.configuration", "must be 'head-to-tail' or 'side-by-side'")
    for path in ("pair.scan_axis", "pair.direction", "fdtd.direction", "fdtd.polarization"):
        _vec3(cfg, path)
    fd = cfg["fdtd"]
    if fd["precision"] not in ("float32", "float64"):
        raise ConfigError("fdtd.precision", "must be 'float32' or 'float64'")
    if fd["fill"] not in ("average", "majority", "center"):
        raise ConfigError("fdtd.fill", "must be 'average', 'majority' or 'center'")
    for i, c in enumerate(fd["centers"]):
        if not isinstance(c, list) or len(c) != 3:
            raise ConfigError(f"fdtd.centers[{i}]", "expected a list of 3 numbers")
    fit = cfg["fit"]
    if len(fit["spectra"]) != len(fit["separations"]):
        raise ConfigError("fit.separations", "must have one entry per file in fit.spectra")


def resolve_path(cfg, value):
    """Interpret a path from the config relative to the config file's directory."""
    p = Path(value)
    if p.is_absolute():
        return p
    src = cfg.get("_source", "")
    if src.startswith("preset:"):
        # bundled presets refer to data shipped next to them
        bundled = resources.files("nanoplasmon.presets").joinpath(str(p))
        if bundled.is_file():
            return Path(str(bundled))
        return Path.cwd() / p
    base = Path(src).parent if src and not src.startswith("<") else Path.cwd()
    return base / p


def preset_names():
    files = resources.files("nanoplasmon.presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".toml"))


def preset_text(name):
    res = resources.files("nanoplasmon.presets").joinpath(f"{name}.toml")
    if not res.is_file():
        raise ConfigError("config", f"no such file or preset {name!r} (presets: {', '.join(preset_names())})")
    return res.read_text()


def loads(text, source="<string>"):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"cannot parse {source}: {exc}") from None
    return validate(raw, source)


def load(path_or_preset):
    """Load a config file, or a bundled preset by name (e.g. ``fig1a``)."""
    p = Path(path_or_preset)
    if p.is_file():
        return loads(p.read_text(), str(p))
    if p.suffix or p.parent != Path("."):
        raise ConfigError("config", f"file not found: {p}")
    return loads(preset_text(str(path_or_preset)), f"preset:{path_or_preset}")


def eps_m_of(cfg):
    env = cfg["environment"]
    if env["index"] is not None:
        return env["index"] ** 2
    return 1.0 if env["eps_m"] is None else env["eps_m"]
