"""Command-line front end: ``nanoplasmon <scenario> --config FILE``.

Scenarios are ``mie``, ``mirror-scan``, ``pair-scan``, ``fdtd`` and
``fit``. ``--config`` takes a TOML file or the name of a bundled preset
(``fig1a``, ``fig3``, ...). Results land in ``<out>/<scenario>/<timestamp>/``
as plain-text tables next to ``manifest.json``, which lists every file with
its SHA-256 digest. On failure a JSON error block is printed to stderr and
the exit status is nonzero (2 for configuration or input errors).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, config, coupled_dipole, materials, mie, spectra
from .errors import ConfigError, TrajectoryError
from .spectrum import ShiftCurve, Spectrum
from .trajectory import ScanTrajectory, ingest_trajectory, synthetic_trajectory

__all__ = ["main", "run_scenario", "ScanTrajectory", "ingest_trajectory"]


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class _Run:
    """Output directory bookkeeping for one scenario run."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.inputs = {}
        self.timings = {}
        self.notes = {}

    def path(self, name):
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def save(self, name, obj):
        p = self.path(name)
        if hasattr(obj, "save"):
            obj.save(p)
        else:
            p.write_text(obj)
        return p

    def table(self, name, header, data, fmt="%.10g"):
        p = self.path(name)
        np.savetxt(p, np.asarray(data), fmt=fmt, header="\n".join(header))
        return p

    def input(self, path):
        path = Path(path)
        self.inputs[str(path)] = _sha256(path)

    def timed(self, label, fn, *args, **kw):
        t = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            self.timings[label] = round(time.perf_counter() - t, 3)


def _output_dir(base, scenario):
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    root = Path(base) / scenario
    cand = root / stamp
    n = 1
    while cand.exists():
        n += 1
        cand = root / f"{stamp}-{n}"
    cand.mkdir(parents=True)
    return cand


# ---------------------------------------------------------------------------
# shared builders

def build_material(cfg, run=None, dispersive=False):
    """Dielectric model from the ``material`` section.

    ``dispersive=True`` (FDTD) turns tabulated data into its Drude-Lorentz fit.
    """
    mat = cfg["material"]
    model = mat["model"]
    if model == "constant":
        return materials.Constant(mat["eps"])
    if mat["file"]:
        path = config.resolve_path(cfg, mat["file"])
        if not path.is_file():
            raise ConfigError("material.file", f"file not found: {path}")
        table = materials.TabulatedInterpolated.from_file(path)
        if run is not None:
            run.input(path)
    else:
        table = materials.johnson_christy_gold()
    if model == "drude-lorentz-fit" or dispersive:
        return materials.fit_drude_lorentz(table, tuple(mat["fit_window"]))
    return table


def _grid(cfg):
    w = cfg["wavelengths"]
    n = int(round((w["stop"] - w["start"]) / w["step"])) + 1
    return w["start"] + w["step"] * np.arange(n)


def _pol_for(configuration, direction, scan_axis):
    d = np.asarray(direction, dtype=float)
    a = np.asarray(scan_axis, dtype=float)
    if configuration == "head-to-tail":
        return tuple(a)
    p = np.cross(d, a)
    if np.linalg.norm(p) < 1e-12:
        raise ConfigError("pair.direction", "must not be parallel to the scan axis")
    return tuple(p / np.linalg.norm(p))


def _trajectory(cfg, run):
    t = cfg["trajectory"]
    if t["file"]:
        path = config.resolve_path(cfg, t["file"])
        if not path.is_file():
            raise ConfigError("trajectory.file", f"file not found: {path}")
        run.input(path)
        return ingest_trajectory(path, t["vertical_offset"], t["pixel_size"])
    if t["flat_height"] is not None:
        n = int(round((t["stop"] - t["start"]) / t["step"])) + 1
        x = t["start"] + t["step"] * np.arange(n)
        return ScanTrajectory(x, np.full(n, t["flat_height"] + t["vertical_offset"]),
                              abs(t["step"]), t["vertical_offset"],
                              meta={"source": "flat synthetic trajectory"})
    return synthetic_trajectory(t["start"], t["stop"], t["step"], cfg["pair"]["diameter"],
                                t["broadening"], t["vertical_offset"])


def _save_force(run, curve, reference_lambda=None):
    if len(curve) < 2:
        return
    table = spectra.force_from_shift(curve, reference_lambda)
    lam = curve.reference_peak if reference_lambda is None else reference_lambda
    run.table("force.txt", [f"reference_lambda_nm: {lam:.6g}",
                            "columns: separation_nm force_pN (negative = attractive)"], table)


def _peak_text(label, spec):
    i = int(np.argmax(spec.values))
    return f"{label}: grid_peak_nm {spec.wavelengths[i]:.6g} max_nm2 {spec.values[i]:.6g}\n"


# ---------------------------------------------------------------------------
# scenarios

def scenario_mie(cfg, run):
    m = cfg["mie"]
    material = build_material(cfg, run)
    eps_m = config.eps_m_of(cfg)
    sphere = mie.Sphere(m["diameter"], material)
    grid = _grid(cfg)
    cs = run.timed("mie", mie.mie_cross_sections, sphere, eps_m, grid)
    peaks = ""
    for kind, spec in cs.items():
        run.save(f"mie_{kind}.txt", spec)
    peaks += _peak_text("mie_scattering", cs["scattering"])
    if m["effective"]:
        s = mie.dipole_spectrum(sphere, eps_m, grid, effective=True)
        run.save("alpha_eff_scattering.txt", s)
        peaks += _peak_text("alpha_eff_scattering", s)
    if m["quasistatic"]:
        s = mie.dipole_spectrum(sphere, eps_m, grid, effective=False)
        run.save("quasistatic_scattering.txt", s)
        peaks += _peak_text("quasistatic_scattering", s)
    run.save("peaks.txt", peaks)
    lam = m["map_wavelength"]
    if lam is None:
        lam = float(cs["scattering"].wavelengths[np.argmax(cs["scattering"].values)])
    plane = tuple(m["map_plane"])
    if m["near_field"]:
        fm = run.timed("near_field", mie.near_field_map, sphere, eps_m, lam, plane,
                       half_width=m["map_half_width"], spacing=m["map_spacing"] or 2.0,
                       interior="mask")
        run.save("near_field_map.txt", fm)
    if m["far_field"]:
        fm = run.timed("far_field", mie.far_field_map, sphere, eps_m, lam, plane,
                       half_width=m["map_half_width"], spacing=m["map_spacing"],
                       interior="mask")
        run.save("far_field_map.txt", fm)


def scenario_mirror(cfg, run):
    m = cfg["mirror"]
    material = build_material(cfg, run)
    eps_m = config.eps_m_of(cfg)
    sphere = mie.Sphere(m["diameter"], material)
    n = int(round((m["gap_stop"] - m["gap_start"]) / m["gap_step"])) + 1
    gaps = m["gap_start"] + m["gap_step"] * np.arange(n)
    grid = _grid(cfg)
    if m["model"] == "image":
        curve = run.timed("model", coupled_dipole.mirror_image_shift, sphere, eps_m,
                          m["eps_lower"], gaps, grid, m["orientation"])
    else:
        fixed = m["fixed_gap"] + sphere.radius
        curve = run.timed("model", coupled_dipole.dipole_between_mirrors_shift, fixed, gaps,
                          eps_m, m["eps_lower"], m["eps_upper"], m["orientation"], sphere, grid)
    run.save("shift_curve.txt", curve)
    if m["measured"]:
        path = config.resolve_path(cfg, m["measured"])
        if not path.is_file():
            raise ConfigError("mirror.measured", f"file not found: {path}")
        run.input(path)
        measured = ShiftCurve.load(path)
        bounds = tuple(m["period_bounds"]) if m["period_bounds"] else None
        corr, corrected = spectra.fit_interference_correction(measured, curve, bounds)
        run.save("corrected_curve.txt", corrected)
        run.save("correction.txt", "\n".join([
            f"amplitude_nm: {corr.amplitude:.6g}", f"period_nm: {corr.period:.6g}",
            f"phase_rad: {corr.phase:.6g}", f"rms_before_nm: {corr.rms_before:.6g}",
            f"rms_after_nm: {corr.rms_after:.6g}",
            f"degenerate: {str(corr.degenerate).lower()}"]) + "\n")


def _pair_geometry(cfg, material):
    p = cfg["pair"]
    return coupled_dipole.PairScanGeometry(
        p["diameter"], material, p["eps_contact"],
        p["eps_lifted"] if p["lift"] else p["eps_contact"], p["lift_threshold"],
        tuple(p["scan_axis"]),
    )


def _fdtd_setup(cfg):
    from . import fdtd

    f = cfg["fdtd"]
    spec = fdtd.GridSpec(cell=f["cell"], pml=f["pml"], courant=f["courant"],
                         dtype=f["precision"], fill=f["fill"])
    pulse = fdtd.PulseSpec(f["pulse_center"], f["pulse_bandwidth"])
    run_kw = {"decay": f["decay"], "max_steps": f["max_steps"],
              "memory_budget": int(f["memory_budget_gib"] * 2**30)}
    return spec, pulse, run_kw


def scenario_pair(cfg, run):
    p = cfg["pair"]
    traj = _trajectory(cfg, run)
    run.save("trajectory.txt", traj)
    pol = _pol_for(p["configuration"], p["direction"], p["scan_axis"])
    grid = _grid(cfg)
    eps_ref = p["eps_contact"]
    if p["model"] == "dipole":
        material = build_material(cfg, run)
        geom = _pair_geometry(cfg, material)
        ill = coupled_dipole.Illumination(tuple(p["direction"]), pol)
        scan = run.timed("scan", coupled_dipole.trajectory_pair_scan, traj, geom, ill, grid)
        fixed, _ = geom.spheres(0.0, 0.0)
        ref = coupled_dipole.single_spectrum(coupled_dipole.DipoleScatterer(fixed, eps_ref), grid)
    else:
        from . import fdtd

        material = build_material(cfg, run, dispersive=True)
        geom = _pair_geometry(cfg, material)
        spec, pulse, kw = _fdtd_setup(cfg)
        result = run.timed("scan", fdtd.run_pair_scan, traj, geom, spec, tuple(p["direction"]),
                           pol, pulse, grid, **kw)
        scan = result.spectra
        run.notes["failures"] = result.failures
        fixed, _ = geom.spheres(0.0, 0.0)
        scene = fdtd.SceneConfig((fixed,), eps_ref, None, tuple(p["direction"]), pol, pulse)
        ref = run.timed("reference", fdtd.simulate, scene, spec, grid, **kw)
    for i, (d, s) in enumerate(scan):
        run.save(f"spectra/sample_{i:03d}_d{d:+08.2f}.txt", s)
    run.save("reference_spectrum.txt", ref)
    if len(scan) >= 1:
        curve = spectra.shift_series(scan, ref, separation_kind="projected")
        run.save("shift_curve.txt", curve)
        _save_force(run, curve, p["reference_lambda"])


def scenario_fdtd(cfg, run):
    from . import fdtd

    f = cfg["fdtd"]
    material = build_material(cfg, run, dispersive=True)
    eps_m = config.eps_m_of(cfg)
    spheres = tuple(mie.Sphere(f["diameter"], material, tuple(c)) for c in f["centers"])
    spec, pulse, kw = _fdtd_setup(cfg)
    scene = fdtd.SceneConfig(spheres, eps_m, None, tuple(f["direction"]),
                             tuple(f["polarization"]), pulse)
    grid = _grid(cfg)
    sigma = run.timed("fdtd", fdtd.simulate, scene, spec, grid, **kw)
    run.save("fdtd_scattering.txt", sigma)
    if f["compare_mie"] and len(spheres) == 1:
        ref = mie.mie_cross_sections(spheres[0], eps_m, grid)["scattering"]
        run.save("mie_scattering.txt", ref)
        rel = (sigma.values - ref.values) / ref.values
        run.table("relative_error.txt", ["columns: wavelength_nm (fdtd-mie)/mie"],
                  np.column_stack([grid, rel]))


def scenario_fit(cfg, run):
    f = cfg["fit"]
    window = tuple(f["window"]) if f["window"] else None

    def load(kind, value, key):
        path = config.resolve_path(cfg, value)
        if not path.is_file():
            raise ConfigError(f"fit.{key}", f"file not found: {path}")
        run.input(path)
        return kind.load(path)

    curve = None
    if f["reference"]:
        ref = load(Spectrum, f["reference"], "reference")
        series = [(d, load(Spectrum, s, "spectra")) for d, s in zip(f["separations"], f["spectra"])]
        fits = [("reference", spectra.fit_peak(ref, window))]
        fits += [(f"d={d:g}", spectra.fit_peak(s, window)) for d, s in series]
        run.save("peaks.txt", "".join(f"[{k}]\n{pf.to_text()}" for k, pf in fits))
        if series:
            curve = spectra.shift_series(series, ref, window, separation_kind=f["separation_kind"])
            run.save("shift_curve.txt", curve)
    elif f["shift_curve"]:
        curve = load(ShiftCurve, f["shift_curve"], "shift_curve")
    else:
        raise ConfigError("fit", "give either fit.reference with fit.spectra or fit.shift_curve")
    if curve is not None and f["model_curve"]:
        model = load(ShiftCurve, f["model_curve"], "model_curve")
        corr, corrected = spectra.fit_interference_correction(curve, model)
        run.save("corrected_model.txt", corrected)
        run.save("correction.txt", f"amplitude_nm: {corr.amplitude:.6g}\nperiod_nm: "
                 f"{corr.period:.6g}\nphase_rad: {corr.phase:.6g}\n")
    if curve is not None:
        _save_force(run, curve, f["reference_lambda"])


SCENARIO_RUNNERS = {
    "mie": scenario_mie,
    "mirror-scan": scenario_mirror,
    "pair-scan": scenario_pair,
    "fdtd": scenario_fdtd,
    "fit": scenario_fit,
}


def _versions():
    import numba
    import scipy

    return {"nanoplasmon": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def run_scenario(scenario, config_ref, out="out", threads=None):
    """Run one scenario; returns the output directory.

    Exceptions propagate after a manifest with ``status: error`` is written
    (when the output directory already exists).
    """
    if scenario not in SCENARIO_RUNNERS:
        raise ConfigError("scenario", f"unknown scenario {scenario!r}")
    cfg = config.load(config_ref)
    if cfg["scenario"] is not None and cfg["scenario"] != scenario:
        raise ConfigError("scenario", f"config is for {cfg['scenario']!r}, not {scenario!r}")
    if threads is not None:
        import numba

        if not 1 <= threads <= numba.config.NUMBA_NUM_THREADS:
            raise ConfigError("--threads", f"must be between 1 and {numba.config.NUMBA_NUM_THREADS}")
        numba.set_num_threads(threads)
    run = _Run(_output_dir(out, scenario))
    src = Path(cfg["_source"])
    if src.is_file():
        run.input(src)
    status, error = "ok", None
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            SCENARIO_RUNNERS[scenario](cfg, run)
        except Exception as exc:
            status, error = "error", _error_block(exc)
            raise
        finally:
            run.timings["total"] = round(time.perf_counter() - t0, 3)
            _write_manifest(run, scenario, cfg, status, error, caught, threads)
    return run.dir


def _write_manifest(run, scenario, cfg, status, error, caught, threads):
    files = {}
    for p in sorted(run.dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[str(p.relative_to(run.dir))] = _sha256(p)
    resolved = {k: v for k, v in cfg.items() if k != "_source"}
    manifest = {
        "scenario": scenario,
        "status": status,
        "config_source": cfg["_source"],
        "config": resolved,
        "versions": _versions(),
        "threads": threads,
        "inputs": run.inputs,
        "files": files,
        "timings_s": run.timings,
        "warnings": sorted({str(w.message) for w in caught}),
        **run.notes,
    }
    if error is not None:
        manifest["error"] = error["error"]
    (run.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _error_block(exc):
    block = {"type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        block["path"] = exc.path
    if isinstance(exc, TrajectoryError) and exc.line is not None:
        block["line"] = exc.line
    return {"error": block}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nanoplasmon",
        description="Plasmon spectra, interaction shifts and force estimates for gold nanoparticles.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="scenario", required=True)
    helps = {
        "mie": "single-sphere Mie and effective-polarizability spectra, field maps",
        "mirror-scan": "particle between two planar surfaces: shift versus gap",
        "pair-scan": "trajectory-driven two-particle scan (dipole model or FDTD)",
        "fdtd": "FDTD scattering spectrum of a sphere arrangement",
        "fit": "peak fits, shift series and force estimates from spectrum files",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True,
                       help="TOML file or bundled preset name (" + ", ".join(config.preset_names()) + ")")
        p.add_argument("--out", default="out", help="base output directory (default: out)")
        p.add_argument("--threads", type=int, default=None, help="numba worker threads")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        out = run_scenario(args.scenario, args.config, args.out, args.threads)
    except (ConfigError, TrajectoryError) as exc:
        print(json.dumps(_error_block(exc), indent=2), file=sys.stderr)
        return 2
    except Exception as exc:  # reported, not swallowed: nonzero exit
        print(json.dumps(_error_block(exc), indent=2), file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
