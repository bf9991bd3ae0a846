"""Dielectric functions of gold and of the surrounding media.

All models use the ``exp(-i omega t)`` time convention, so a passive medium
has ``Im eps >= 0``. Wavelengths are vacuum wavelengths in nm; frequencies
of the Drude-Lorentz model are angular frequencies in rad/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy import constants, optimize

from .errors import FitError, WavelengthRangeError

# hc in eV nm, and hbar in eV s
HC_EV_NM = constants.h * constants.c / constants.e * 1e9
HBAR_EV_S = constants.hbar / constants.e

DRUDE_LORENTZ_WINDOW = (400.0, 900.0)


def wavelength_to_energy(wavelength):
    """Photon energy in eV for a vacuum wavelength in nm."""
    return HC_EV_NM / np.asarray(wavelength, dtype=float)


def wavelength_to_omega(wavelength):
    """Angular frequency in rad/s for a vacuum wavelength in nm."""
    return 2.0 * np.pi * constants.c / (np.asarray(wavelength, dtype=float) * 1e-9)


def omega_to_wavelength(omega):
    return 2.0 * np.pi * constants.c / np.asarray(omega, dtype=float) * 1e9


def _check_window(wavelength, window):
    wl = np.asarray(wavelength, dtype=float)
    lo, hi = window
    # tolerate float noise at the window edges
    tol = 1e-9 * max(1.0, hi if math.isfinite(hi) else 1.0)
    bad = (wl < lo - tol) | (wl > hi + tol) | ~np.isfinite(wl)
    if np.any(bad):
        first = float(np.atleast_1d(wl)[np.atleast_1d(bad)][0])
        raise WavelengthRangeError(first, window)


@dataclass(frozen=True)
class Constant:
    """Non-dispersive, lossless medium."""

    eps: float
    label: str = "constant"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"constant permittivity must be positive, got {self.eps}")

    @property
    def window(self):
        return (0.0, math.inf)

    def permittivity(self, wavelength):
        _check_window(wavelength, self.window)
        wl = np.asarray(wavelength, dtype=float)
        return np.full(wl.shape, complex(self.eps))[()]


@dataclass(frozen=True, eq=False)
class TabulatedInterpolated:
    """Tabulated permittivity, linearly interpolated in photon energy.

    Parameters
    ----------
    energies : array_like
        Photon energies in eV, strictly increasing.
    eps : array_like of complex
        Permittivity at each energy.
    label : str
        Source of the data.
    """

    energies: np.ndarray
    eps: np.ndarray
    label: str = "table"

    def __post_init__(self):
        energies = np.asarray(self.energies, dtype=float)
        eps = np.asarray(self.eps, dtype=complex)
        if energies.ndim != 1 or energies.shape != eps.shape:
            raise ValueError("energies and eps must be 1-D arrays of equal length")
        if energies.size < 2:
            raise ValueError("a tabulated model needs at least 2 samples")
        if np.any(np.diff(energies) <= 0):
            raise ValueError("tabulated energies must be strictly increasing")
        if np.any(eps.imag < 0):
            raise ValueError("tabulated permittivity violates passivity (Im eps < 0)")
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "eps", eps)

    @property
    def window(self):
        return (float(HC_EV_NM / self.energies[-1]), float(HC_EV_NM / self.energies[0]))

    def permittivity(self, wavelength):
        _check_window(wavelength, self.window)
        energy = np.clip(wavelength_to_energy(wavelength), self.energies[0], self.energies[-1])
        re = np.interp(energy, self.energies, self.eps.real)
        im = np.interp(energy, self.energies, self.eps.imag)
        return (re + 1j * im)[()]

    @classmethod
    def from_file(cls, path, label=None):
        """Read a three-column text file (eV, Re eps, Im eps; '#' comments)."""
        data = np.loadtxt(path, comments="#", ndmin=2)
        if data.shape[1] != 3:
            raise ValueError(f"{path}: expected 3 columns, found {data.shape[1]}")
        return cls(data[:, 0], data[:, 1] + 1j * data[:, 2], label=label or str(path))


@dataclass(frozen=True)
class LorentzPole:
    """One Lorentz oscillator: strength (dimensionless), resonance and damping in rad/s."""

    strength: float
    resonance_frequency: float
    damping: float


@dataclass(frozen=True)
class DrudeLorentz:
    """Drude term plus Lorentz poles.

    ``eps(w) = eps_inf - wp**2 / (w**2 + i g w)
    + sum_k s_k w_k**2 / (w_k**2 - w**2 - i g_k w)``
    """

    eps_inf: float
    plasma_frequency: float
    drude_damping: float
    poles: tuple[LorentzPole, ...] = ()
    window: tuple[float, float] = DRUDE_LORENTZ_WINDOW
    label: str = "drude-lorentz"

    def __post_init__(self):
        object.__setattr__(self, "poles", tuple(self.poles))
        if self.eps_inf < 1:
            raise ValueError(f"eps_inf must be >= 1, got {self.eps_inf}")
        if self.drude_damping < 0 or self.plasma_frequency < 0:
            raise ValueError("Drude plasma frequency and damping must be >= 0")
        for p in self.poles:
            if p.strength < 0 or p.damping < 0 or p.resonance_frequency <= 0:
                raise ValueError(f"invalid Lorentz pole {p}")

    def permittivity_omega(self, omega):
        """Permittivity at angular frequency ``omega`` (no window check)."""
        w = np.asarray(omega, dtype=float)
        eps = self.eps_inf - self.plasma_frequency**2 / (w**2 + 1j * self.drude_damping * w)
        for p in self.poles:
            w0 = p.resonance_frequency
            eps = eps + p.strength * w0**2 / (w0**2 - w**2 - 1j * p.damping * w)
        return eps

    def permittivity(self, wavelength):
        _check_window(wavelength, self.window)
        return np.asarray(self.permittivity_omega(wavelength_to_omega(wavelength)))[()]


def eval_permittivity(model, wavelength):
    """Complex permittivity of ``model`` at vacuum ``wavelength`` (nm).

    Raises
    ------
    WavelengthRangeError
        If any wavelength lies outside the model's validity window.
    """
    return model.permittivity(wavelength)


def johnson_christy_gold():
    """Bundled Johnson & Christy (1972) gold table."""
    ref = resources.files("nanoplasmon") / "data" / "johnson_christy_gold.txt"
    with resources.as_file(ref) as path:
        return TabulatedInterpolated.from_file(path, label="Johnson & Christy 1972, gold")


# Drude + 2 Lorentz in eV units:
# (eps_inf, Ep, gamma, s1, E1, g1, s2, E2, g2)
_FIT_SEEDS = (
    (6.0, 8.9, 0.07, 1.0, 2.6, 0.5, 2.0, 3.5, 1.0),
    (3.0, 8.5, 0.10, 0.5, 2.8, 0.6, 1.5, 4.0, 1.5),
    (8.0, 9.0, 0.05, 2.0, 2.5, 0.4, 1.0, 3.2, 0.8),
    (1.5, 8.0, 0.15, 1.0, 3.0, 0.8, 3.0, 4.5, 2.0),
    (5.0, 8.7, 0.08, 0.3, 2.4, 0.3, 4.0, 3.8, 1.2),
    (2.0, 9.2, 0.06, 3.0, 3.2, 1.0, 0.5, 2.7, 0.5),
    (10.0, 9.5, 0.04, 1.5, 2.7, 0.7, 0.5, 5.0, 2.5),
    (4.0, 7.5, 0.20, 0.8, 2.9, 0.9, 2.5, 3.4, 0.6),
)


def _dl_eps_ev(params, energy):
    einf, ep, g, s1, e1, g1, s2, e2, g2 = params
    e = energy
    eps = einf - ep**2 / (e**2 + 1j * g * e)
    eps = eps + s1 * e1**2 / (e1**2 - e**2 - 1j * g1 * e)
    eps = eps + s2 * e2**2 / (e2**2 - e**2 - 1j * g2 * e)
    return eps


def _params_to_model(params, label):
    einf, ep, g, s1, e1, g1, s2, e2, g2 = (float(v) for v in params)
    to_w = 1.0 / HBAR_EV_S
    poles = sorted(
        [LorentzPole(s1, e1 * to_w, g1 * to_w), LorentzPole(s2, e2 * to_w, g2 * to_w)],
        key=lambda p: p.resonance_frequency,
    )
    return DrudeLorentz(max(einf, 1.0), ep * to_w, g * to_w, tuple(poles), label=label)


@dataclass(frozen=True)
class FitReport:
    model: DrudeLorentz
    max_relative_misfit: float
    window: tuple[float, float]
    seeds_tried: int = field(default=len(_FIT_SEEDS))


def max_relative_misfit(model, table, window, step=1.0):
    """Largest ``|eps_model - eps_table| / |eps_table|`` on a ``step``-nm grid."""
    wl = np.arange(window[0], window[1] + 0.5 * step, step)
    ref = table.permittivity(wl)
    fit = np.asarray(model.permittivity_omega(wavelength_to_omega(wl)))
    return float(np.max(np.abs(fit - ref) / np.abs(ref)))


def fit_drude_lorentz(table, window=(450.0, 750.0), max_misfit=0.10, return_report=False):
    """Least-squares fit of a Drude + 2 Lorentz model to tabulated data.

    The fit minimizes the relative complex misfit on a 1 nm grid over
    ``window`` with bounded trust-region least squares, started from eight
    fixed seeds; the best result is kept, so the outcome is deterministic.

    Parameters
    ----------
    table : TabulatedInterpolated
    window : (float, float)
        Wavelength window in nm; must lie inside the table range and span at
        least 100 nm.
    max_misfit : float
        Largest acceptable relative misfit of complex eps over the window.

    Returns
    -------
    DrudeLorentz, or FitReport if ``return_report``.

    Raises
    ------
    ValueError
        Window too narrow or outside the table.
    FitError
        Best misfit exceeds ``max_misfit``.
    """
    lo, hi = float(window[0]), float(window[1])
    if hi - lo < 100.0:
        raise ValueError(f"fit window must span >= 100 nm, got {hi - lo:.1f} nm")
    tlo, thi = table.window
    if lo < tlo or hi > thi:
        raise ValueError(f"fit window {window} outside table range {tlo:.1f}-{thi:.1f} nm")

    wl = np.arange(lo, hi + 0.5, 1.0)
    energy = wavelength_to_energy(wl)
    target = table.permittivity(wl)
    scale = np.abs(target)

    def residual(p):
        d = (_dl_eps_ev(p, energy) - target) / scale
        return np.concatenate([d.real, d.imag])

    lower = [1.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.5, 0.0]
    upper = [30.0, 20.0, 5.0, 50.0, 10.0, 10.0, 50.0, 10.0, 10.0]
    best = None
    for seed in _FIT_SEEDS:
        x0 = np.clip(seed, np.array(lower) + 1e-9, np.array(upper) - 1e-9)
        try:
            res = optimize.least_squares(
                residual, x0, bounds=(lower, upper), method="trf", x_scale="jac",
                xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=4000,
            )
        except (ValueError, np.linalg.LinAlgError):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitError("Drude-Lorentz fit failed for every seed")

    model = _params_to_model(best.x, label=f"Drude+2 Lorentz fit to {table.label}")
    misfit = max_relative_misfit(model, table, (lo, hi))
    if misfit > max_misfit:
        raise FitError(
            f"Drude-Lorentz misfit {misfit:.3f} exceeds {max_misfit:.3f}", misfit=misfit
        )
    if return_report:
        return FitReport(model, misfit, (lo, hi))
    return model


@dataclass(frozen=True)
class EffectiveMedium:
    components: tuple[tuple[float, float], ...]
    eps_m: float


def effective_medium(components):
    """Weighted average of real permittivities.

    Parameters
    ----------
    components : sequence of (eps, weight)
        Weights need not be normalized but must be non-negative with a
        positive sum.

    Returns
    -------
    float
        ``sum(w * eps) / sum(w)``.
    """
    comps = [(float(e), float(w)) for e, w in components]
    weights = np.array([w for _, w in comps])
    if np.any(weights < 0):
        raise ValueError("effective-medium weights must be non-negative")
    total = weights.sum()
    if not total > 0:
        raise ValueError("effective-medium weights sum to zero")
    eps = np.array([e for e, _ in comps])
    return float(np.dot(eps, weights) / total)


def effective_medium_model(components):
    comps = tuple((float(e), float(w)) for e, w in components)
    total = sum(w for _, w in comps)
    eps_m = effective_medium(comps)
    return EffectiveMedium(tuple((e, w / total) for e, w in comps), eps_m)


def weights_for_index(n_eff, eps_a, eps_b):
    """Weights ``(w_a, w_b)`` whose average of ``eps_a`` and ``eps_b`` equals ``n_eff**2``."""
    target = n_eff**2
    if not min(eps_a, eps_b) <= target <= max(eps_a, eps_b):
        raise ValueError(f"n_eff={n_eff} not reachable from eps {eps_a} and {eps_b}")
    if eps_a == eps_b:
        return (0.5, 0.5)
    w_b = (target - eps_a) / (eps_b - eps_a)
    return (1.0 - w_b, w_b)
