"""Dispersive 3D FDTD solver for gold spheres."""
import os

import numba

if "NUMBA_THREADING_LAYER" not in os.environ:
    # skip probing an incompatible TBB installation
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .core import (
    GridSpec,
    MonitorSet,
    PairScanResult,
    PulseSpec,
    SceneConfig,
    build_scene,
    field_energy,
    flux_spectra,
    run_pair_scan,
    run_scattering,
    simulate,
    step,
)

__all__ = [
    "GridSpec", "MonitorSet", "PairScanResult", "PulseSpec", "SceneConfig", "build_scene",
    "field_energy", "flux_spectra", "run_pair_scan", "run_scattering", "simulate", "step",
]
