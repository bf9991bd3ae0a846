"""Plasmon-spectrum analysis: peak fits, shift curves, interference
correction and force estimates from shift gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import constants, optimize

from . import materials
from .mie import clausius_mossotti_alpha, cross_section_from_alpha, radiative_correction
from .spectrum import ShiftCurve

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
EV_PER_NM_TO_PN = constants.e / 1e-9 * 1e12
LOW_CONFIDENCE_RESIDUAL = 0.2


@lru_cache(maxsize=1)
def default_lineshape_material():
    """Drude + 2 Lorentz fit to the bundled gold table (450-750 nm)."""
    return materials.fit_drude_lorentz(materials.johnson_christy_gold(), (450.0, 750.0))


@dataclass(frozen=True)
class PeakFit:
    lambda_peak: float
    fwhm: float
    residual: float
    low_confidence: bool
    diameter: float
    eps_m: float
    amplitude: float
    window: tuple[float, float]
    offset: float = 0.0  # model is L(lambda - offset)
    model_tag: str = "alpha_eff_lineshape"
    notes: tuple[str, ...] = ()

    def to_text(self):
        lines = [
            f"model: {self.model_tag}",
            f"lambda_peak_nm: {self.lambda_peak:.4f}",
            f"fwhm_nm: {self.fwhm:.4f}",
            f"residual_nrms: {self.residual:.6f}",
            f"low_confidence: {str(self.low_confidence).lower()}",
            f"effective_diameter_nm: {self.diameter:.6g}",
            f"effective_eps_m: {self.eps_m:.6g}",
            f"amplitude: {self.amplitude:.6g}",
            f"window_nm: {self.window[0]:g} {self.window[1]:g}",
            f"wavelength_offset_nm: {self.offset:.6g}",
        ]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def lineshape(wavelengths, diameter, eps_m, material=None):
    """Unscaled scattering lineshape from the effective polarizability."""
    material = material or default_lineshape_material()
    wl = np.asarray(wavelengths, dtype=float)
    eps_p = material.permittivity_omega(materials.wavelength_to_omega(wl))
    alpha = radiative_correction(clausius_mossotti_alpha(diameter, eps_p, eps_m), diameter, eps_m, wl)
    return cross_section_from_alpha(alpha, eps_m, wl)


def golden_section_max(f, lo, hi, tol=0.01):
    """Maximize a unimodal ``f`` on [lo, hi] to absolute tolerance ``tol``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


_D_SEEDS = (20.0, 50.0, 80.0, 110.0, 150.0, 200.0)
_EPS_SEEDS = tuple(np.linspace(1.0, 3.5, 26))
_SEED_GRID = np.linspace(380.0, 1000.0, 1241)


def _seed_peaks(material):
    """Model peak wavelength of every (D, eps_m) seed, zero offset."""
    key = id(material)
    if key not in _seed_cache:
        peaks = {}
        for d in _D_SEEDS:
            for e in _EPS_SEEDS:
                peaks[(d, e)] = _SEED_GRID[np.argmax(lineshape(_SEED_GRID, d, e, material))]
        _seed_cache[key] = (material, peaks)
    return _seed_cache[key][1]


_seed_cache: dict = {}


def fit_peak(spectrum, window=None, material=None, min_samples=10):
    """Fit the effective-polarizability lineshape and locate its maximum.

    The model is ``A * L(lambda - s; D, eps_m)``: an effective diameter, an
    effective medium permittivity, a rigid wavelength offset ``s`` and an
    amplitude (the latter solved linearly). The offset makes the model
    family closed under translation, so translating the input grid
    translates the fitted peak by the same amount. Seeds are aligned to the
    data maximum for the same reason. The peak is the argmax of the fitted
    model, refined by golden-section search to 0.001 nm.

    Parameters
    ----------
    spectrum : Spectrum
    window : (float, float), optional
        Fit window in nm; defaults to the full spectrum.
    material : dielectric model with ``permittivity_omega``, optional
        Defaults to the Drude-Lorentz fit of the bundled gold table.

    Returns
    -------
    PeakFit
        ``low_confidence`` is set when the normalized RMS residual exceeds
        0.2 or when the model maximum sits on the window edge.

    Raises
    ------
    ValueError
        Fewer than ``min_samples`` points inside the window.
    """
    material = material or default_lineshape_material()
    wl_all, y_all = spectrum.wavelengths, spectrum.values
    lo, hi = (wl_all[0], wl_all[-1]) if window is None else (float(window[0]), float(window[1]))
    sel = (wl_all >= lo) & (wl_all <= hi)
    if sel.sum() < min_samples:
        raise ValueError(f"need >= {min_samples} samples in window, found {int(sel.sum())}")
    wl, y = wl_all[sel], y_all[sel]
    scale = np.max(np.abs(y))
    if not scale > 0:
        raise ValueError("spectrum is identically zero in the fit window")
    yn = y / scale
    # work relative to the first sample so the problem is translation invariant
    origin = float(wl[0])
    x = wl - origin
    data_peak = float(x[np.argmax(yn)])

    def best_amp(shape):
        denom = np.dot(shape, shape)
        return np.dot(shape, yn) / denom if denom > 0 else 0.0

    def shape_at(p, xs):
        # p = (D, eps_m, t); the model is L evaluated at x + t
        return lineshape(xs + p[2], p[0], p[1], material)

    def resid(p):
        shape = shape_at(p, x)
        return best_amp(shape) * shape - yn

    best_cost, x0 = np.inf, None
    for (d, e), pk in _seed_peaks(material).items():
        p = (d, e, pk - data_peak)
        cost = float(np.sum(resid(p) ** 2))
        if cost < best_cost:
            best_cost, x0 = cost, p
    res = optimize.least_squares(
        resid, x0, bounds=([2.0, 0.5, x0[2] - 300.0], [400.0, 6.0, x0[2] + 300.0]),
        x_scale=(20.0, 0.1, 5.0), xtol=1e-12, ftol=1e-14, gtol=1e-14, max_nfev=3000,
    )
    diameter, eps_m, shift = (float(v) for v in res.x)
    p = (diameter, eps_m, shift)
    shape = shape_at(p, x)
    amp = best_amp(shape)
    residual = float(np.sqrt(np.mean((amp * shape - yn) ** 2)))

    def model(xs):
        return shape_at(p, np.asarray(xs, dtype=float) - origin)

    fine = np.linspace(lo, hi, max(200, int((hi - lo) / 0.5) + 1))
    k = int(np.argmax(model(fine)))
    notes = []
    edge = k == 0 or k == fine.size - 1
    if edge:
        lam = float(fine[k])
        notes.append("model maximum on window edge")
    else:
        lam = float(golden_section_max(lambda v: float(model([v])[0]), fine[k - 1], fine[k + 1],
                                       tol=0.001))
    if residual > LOW_CONFIDENCE_RESIDUAL:
        notes.append(f"residual {residual:.3f} > {LOW_CONFIDENCE_RESIDUAL}")
    return PeakFit(
        lambda_peak=lam,
        fwhm=_fwhm(model, lam, lo, hi),
        residual=residual,
        low_confidence=bool(edge or residual > LOW_CONFIDENCE_RESIDUAL),
        diameter=diameter,
        eps_m=eps_m,
        amplitude=float(amp * scale),
        window=(float(lo), float(hi)),
        offset=float(origin - shift),
        notes=tuple(notes),
    )


def _fwhm(model, peak, lo, hi):
    span = hi - lo
    x = np.linspace(max(350.0, lo - span), min(1200.0, hi + span), 4001)
    y = model(x)
    half = model(np.array([peak]))[0] / 2.0
    left = x[(x < peak) & (y < half)]
    right = x[(x > peak) & (y < half)]
    if left.size == 0 or right.size == 0:
        return float("nan")
    return float(right[0] - left[-1])


def shift_series(spectra, reference, window=None, material=None, separation_kind="projected"):
    """Peak shift of each spectrum relative to ``reference``.

    Parameters
    ----------
    spectra : sequence of (separation nm, Spectrum)
    reference : Spectrum
        Isolated-particle spectrum.

    Returns
    -------
    ShiftCurve
        ``flags`` carries the low-confidence markers of the individual fits
        (the reference flag is OR-ed in).
    """
    ref = fit_peak(reference, window, material)
    d, shift, flags = [], [], []
    for sep, spec in spectra:
        pf = fit_peak(spec, window, material)
        d.append(float(sep))
        shift.append(pf.lambda_peak - ref.lambda_peak)
        flags.append(pf.low_confidence or ref.low_confidence)
    return ShiftCurve(np.array(d), np.array(shift), ref.lambda_peak, separation_kind,
                      np.array(flags, dtype=bool))


@dataclass(frozen=True)
class InterferenceCorrection:
    amplitude: float
    period: float
    phase: float
    rms_before: float = float("nan")
    rms_after: float = float("nan")
    degenerate: bool = False

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if not self.period > 0:
            raise ValueError("period must be positive")

    def __call__(self, d):
        return self.amplitude * np.sin(2.0 * np.pi * np.asarray(d) / self.period + self.phase)


def fit_interference_correction(measured, model, period_bounds=None):
    """Fit ``A sin(2 pi d / T + phi)`` to ``measured - model``.

    The model curve is resampled onto the measured separations by linear
    interpolation when the grids differ. The period is searched on a dense
    grid (linear solve for the sine and cosine amplitudes at each trial
    period) and then refined by least squares over (A, T, phi).

    Returns
    -------
    correction : InterferenceCorrection
        ``degenerate`` is set when the best period runs into the bound set
        by the data span (the period is then clamped to the span).
    corrected : ShiftCurve
        Model curve plus the fitted sinusoid, on the measured separations.
    """
    d = measured.separations
    model_shift = _resample(model, d)
    r = measured.peak_shift - model_shift
    span = float(np.ptp(d))
    if span <= 0:
        raise ValueError("need at least two distinct separations")
    spacing = float(np.min(np.abs(np.diff(np.sort(d)))))
    t_lo, t_hi = period_bounds or (2.0 * spacing, span)

    rms_before = float(np.sqrt(np.mean(r**2)))
    if rms_before == 0.0:
        corr = InterferenceCorrection(0.0, t_hi, 0.0, 0.0, 0.0)
        return corr, _with_shift(measured, model_shift, model.reference_peak)

    def linear_fit(period):
        arg = 2.0 * np.pi * d / period
        basis = np.column_stack([np.sin(arg), np.cos(arg)])
        coef, *_ = np.linalg.lstsq(basis, r, rcond=None)
        return coef, float(np.sum((basis @ coef - r) ** 2))

    periods = np.geomspace(t_lo, t_hi, 600)
    costs = [linear_fit(p)[1] for p in periods]
    i = int(np.argmin(costs))
    period = float(periods[i])
    (cs, cc), _ = linear_fit(period)
    amp, phase = math.hypot(cs, cc), math.atan2(cc, cs)

    def resid(p):
        return p[0] * np.sin(2.0 * np.pi * d / p[1] + p[2]) - r

    res = optimize.least_squares(
        resid, (amp, period, phase), bounds=([0.0, t_lo, -np.inf], [np.inf, t_hi, np.inf])
    )
    amp, period, phase = (float(v) for v in res.x)
    degenerate = period >= t_hi * (1 - 1e-6)
    phase = (phase + np.pi) % (2 * np.pi) - np.pi
    corr = InterferenceCorrection(
        amp, min(period, t_hi), phase, rms_before,
        float(np.sqrt(np.mean(resid(res.x) ** 2))), degenerate,
    )
    return corr, _with_shift(measured, model_shift + corr(d), model.reference_peak)


def _resample(curve, d):
    if curve.separations.shape == d.shape and np.array_equal(curve.separations, d):
        return curve.peak_shift.copy()
    order = np.argsort(curve.separations)
    return np.interp(d, curve.separations[order], curve.peak_shift[order])


def _with_shift(template, shift, reference_peak):
    return ShiftCurve(template.separations, shift, reference_peak, template.separation_kind,
                      meta={"corrected": "sinusoidal interference"})


def energy_shift(delta_lambda, reference_lambda):
    """Photon-energy change in eV; a red shift lowers the energy."""
    hc = materials.HC_EV_NM
    return -hc * np.asarray(delta_lambda, dtype=float) / reference_lambda**2


def force_from_shift(curve, reference_lambda=None):
    """Interaction force (pN) from the gradient of the energy shift.

    ``F = -dE/dd`` with central differences inside and one-sided
    differences at the ends. Negative values are attractive.

    Returns
    -------
    ndarray, shape (n, 2)
        Columns: separation (nm), force (pN).
    """
    if len(curve) < 2:
        raise ValueError("need at least 2 points for a force estimate")
    lam = curve.reference_peak if reference_lambda is None else float(reference_lambda)
    energy = energy_shift(curve.peak_shift, lam)
    force = -np.gradient(energy, curve.separations, edge_order=1) * EV_PER_NM_TO_PN
    return np.column_stack([curve.separations, force])
