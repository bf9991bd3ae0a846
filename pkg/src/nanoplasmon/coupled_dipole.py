"""Point-dipole interaction models.

Two coupled retarded dipoles, a dipole above a dielectric half-space in
the quasi-static image picture, and a dipole between two planar
interfaces with the reflected field from angular-spectrum integrals.

Units follow :mod:`nanoplasmon.mie`: lengths in nm, ``p = alpha * E`` with
``alpha`` in nm**3 (the ``4 pi R^3`` convention), so the field of a dipole
in the host medium is ``E = G p`` with ``G`` from
:func:`free_space_green_tensor`. Time dependence is ``exp(-i omega t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spectra
from .errors import ConvergenceError, GeometryError, NumericError, SingularityError
from .materials import johnson_christy_gold
from .mie import Sphere, cross_section_from_alpha, effective_polarizability
from .spectrum import ShiftCurve, Spectrum
from .trajectory import ScanTrajectory

DEFAULT_GRID = np.arange(450.0, 750.5, 1.0)
ORIENTATIONS = ("perpendicular", "parallel")


def _wavenumber(wavelength, eps_m):
    return 2.0 * np.pi * np.sqrt(eps_m) / np.asarray(wavelength, dtype=float)


def free_space_green_tensor(r_vec, wavelength, eps_m):
    """Retarded dyadic Green tensor of a homogeneous medium.

    ``G(r) = exp(ikr)/(4 pi r^3) [(k^2 r^2 + ikr - 1) I + (3 - 3ikr - k^2 r^2) rr]``
    with ``k = 2 pi sqrt(eps_m) / wavelength``.

    Parameters
    ----------
    r_vec : array_like, shape (3,)
        Observation point relative to the dipole, nm.
    wavelength : float or array_like
        Vacuum wavelength(s), nm.
    eps_m : float

    Returns
    -------
    ndarray, shape (3, 3) or wavelength.shape + (3, 3)

    Raises
    ------
    SingularityError
        ``r_vec`` is the zero vector.
    """
    r_vec = np.asarray(r_vec, dtype=float)
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        raise SingularityError("Green tensor is singular at zero separation")
    rhat = r_vec / r
    k = _wavenumber(wavelength, eps_m)
    kr = k * r
    pref = np.exp(1j * kr) / (4.0 * np.pi * r**3)
    a = pref * (kr**2 + 1j * kr - 1.0)
    b = pref * (3.0 - 3j * kr - kr**2)
    return (a[..., None, None] * np.eye(3) + b[..., None, None] * np.outer(rhat, rhat))


@dataclass(frozen=True)
class Illumination:
    """Incident field: unit direction, unit polarization, plane or evanescent.

    The evanescent variant keeps the plane-wave phase along ``direction``
    and decays as ``exp(-z / decay_length)`` away from the surface z = 0.
    """

    direction: tuple = (0.0, 1.0, 0.0)
    polarization: tuple = (1.0, 0.0, 0.0)
    kind: str = "plane-wave"
    decay_length: float | None = None

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        p = np.asarray(self.polarization, dtype=float)
        if d.shape != (3,) or p.shape != (3,):
            raise ValueError("direction and polarization must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9 or abs(np.linalg.norm(p) - 1.0) > 1e-9:
            raise ValueError("direction and polarization must be unit vectors")
        if abs(np.dot(d, p)) > 1e-9:
            raise ValueError("polarization must be perpendicular to direction")
        if self.kind not in ("plane-wave", "evanescent"):
            raise ValueError(f"unknown illumination kind {self.kind!r}")
        if self.kind == "evanescent" and not (self.decay_length and self.decay_length > 0):
            raise ValueError("evanescent illumination needs a positive decay_length")
        object.__setattr__(self, "direction", tuple(d))
        object.__setattr__(self, "polarization", tuple(p))

    def field(self, point, wavelength, eps_m):
        """Incident field at ``point``, shape wavelength.shape + (3,)."""
        point = np.asarray(point, dtype=float)
        k = _wavenumber(wavelength, eps_m)
        amp = np.exp(1j * k * np.dot(self.direction, point))
        if self.kind == "evanescent":
            amp = amp * np.exp(-point[2] / self.decay_length)
        return amp[..., None] * np.asarray(self.polarization)


@dataclass(frozen=True)
class DipoleScatterer:
    """A sphere treated as a point dipole at its center."""

    sphere: Sphere
    eps_m: float

    @property
    def position(self):
        return np.asarray(self.sphere.center)

    def polarizability(self, wavelength):
        return effective_polarizability(self.sphere, self.eps_m, wavelength)


def gold_sphere(diameter=100.0, center=(0.0, 0.0, 0.0), material=None):
    return Sphere(diameter, material or johnson_christy_gold(), center)


def pair_spectrum(p1, p2, ill, grid=DEFAULT_GRID):
    """Scattering spectrum of two coupled dipoles.

    Solves ``p_i = alpha_i [E_inc(r_i) + G(r_i - r_j) p_j]`` at every
    wavelength and returns the power radiated by both dipoles together
    (interference included) over the incident intensity at the origin.

    Raises
    ------
    GeometryError
        The spheres overlap.
    NumericError
        The coupled system is singular; the message names the wavelength.
    """
    if p1.eps_m != p2.eps_m:
        raise ValueError("both scatterers must share the host permittivity")
    eps_m = p1.eps_m
    sep = np.linalg.norm(p1.position - p2.position)
    if sep < p1.sphere.radius + p2.sphere.radius:
        raise GeometryError(
            f"spheres overlap: center distance {sep:.3f} nm < sum of radii "
            f"{p1.sphere.radius + p2.sphere.radius:.3f} nm"
        )
    # canonical order so that exchanging the scatterers is bit-identical
    a, b = sorted((p1, p2), key=lambda s: (tuple(s.sphere.center), s.sphere.diameter))
    wl = np.asarray(grid, dtype=float)
    k = _wavenumber(wl, eps_m)
    r12 = a.position - b.position
    g = free_space_green_tensor(r12, wl, eps_m)
    al1, al2 = a.polarizability(wl), b.polarizability(wl)

    n = wl.size
    m = np.zeros((n, 6, 6), dtype=complex)
    eye = np.eye(3)
    m[:, :3, :3] = eye
    m[:, 3:, 3:] = eye
    m[:, :3, 3:] = -al1[:, None, None] * g
    m[:, 3:, :3] = -al2[:, None, None] * g
    rhs = np.concatenate(
        [al1[:, None] * ill.field(a.position, wl, eps_m), al2[:, None] * ill.field(b.position, wl, eps_m)],
        axis=1,
    )
    cond = np.linalg.cond(m)
    bad = ~np.isfinite(cond) | (cond > 1e12)
    if np.any(bad):
        raise NumericError(f"coupled-dipole system singular at {wl[np.argmax(bad)]:.3f} nm")
    p = np.linalg.solve(m, rhs[..., None])[..., 0]
    pa, pb = p[:, :3], p[:, 3:]

    self_term = k**3 / (6.0 * np.pi) * (np.sum(np.abs(pa) ** 2, axis=1) + np.sum(np.abs(pb) ** 2, axis=1))
    cross = np.einsum("wi,wij,wj->w", pa.conj(), g.imag, pb)
    power = self_term + 2.0 * cross.real
    sigma = k * power
    sigma = np.clip(sigma, 0.0, None)
    return Spectrum(wl, sigma, "scattering", {
        "model": "coupled dipoles",
        "center_distance_nm": f"{sep:.6g}",
        "eps_m": f"{eps_m:g}",
    })


def single_spectrum(scatterer, grid=DEFAULT_GRID):
    """Isolated-particle reference spectrum of a dipole scatterer."""
    wl = np.asarray(grid, dtype=float)
    alpha = scatterer.polarizability(wl)
    return Spectrum(wl, cross_section_from_alpha(alpha, scatterer.eps_m, wl), "scattering",
                    {"model": "effective polarizability", "eps_m": f"{scatterer.eps_m:g}"})


def image_factor(eps_substrate, eps_m):
    return (eps_substrate - eps_m) / (eps_substrate + eps_m)


def _check_orientation(orientation):
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}, got {orientation!r}")


def _renormalized_spectrum(sphere, eps_m, wl, coupling):
    alpha = effective_polarizability(sphere, eps_m, wl)
    dressed = alpha / (1.0 - alpha * coupling)
    return Spectrum(wl, cross_section_from_alpha(dressed, eps_m, wl), "scattering")


def mirror_image_shift(sphere, eps_m, eps_substrate, gap, grid=DEFAULT_GRID,
                       orientation="perpendicular", window=None):
    """Quasi-static image-dipole peak shift versus surface gap.

    The image of a dipole at height ``h = gap + R`` carries the factor
    ``beta = (eps_sub - eps_m)/(eps_sub + eps_m)`` and sits ``2h`` away; its
    static field acting back on the dipole renormalizes
    ``alpha' = alpha / (1 - alpha C)`` with ``C = f beta / (4 pi (2h)^3)``,
    ``f = 2`` for a dipole normal to the surface and 1 parallel to it.

    Returns
    -------
    ShiftCurve
        Separation kind ``gap``; shifts from :func:`spectra.fit_peak`.
    """
    _check_orientation(orientation)
    gap = np.atleast_1d(np.asarray(gap, dtype=float))
    if np.any(gap <= 0):
        raise ValueError("gap must be positive")
    wl = np.asarray(grid, dtype=float)
    beta = image_factor(eps_substrate, eps_m)
    f = 2.0 if orientation == "perpendicular" else 1.0
    ref = _renormalized_spectrum(sphere, eps_m, wl, 0.0)
    series = []
    for g in gap:
        s = 2.0 * (g + sphere.radius)
        series.append((g, _renormalized_spectrum(sphere, eps_m, wl, f * beta / (4.0 * np.pi * s**3))))
    curve = spectra.shift_series(series, ref, window, separation_kind="gap")
    return ShiftCurve(curve.separations, curve.peak_shift, curve.reference_peak, "gap", curve.flags,
                      {"model": "image dipole", "orientation": orientation,
                       "eps_substrate": f"{eps_substrate:g}", "eps_m": f"{eps_m:g}"})


# reflected Green function of a planar interface

def _segments(k1, k2_over_k1, z):
    """Integration segments in the substituted variables, per wavelength.

    Propagating part ``ks = k1 sin t`` (t in [0, pi/2]) and evanescent part
    ``ks = k1 cosh u`` up to ``max(20 k1, 18 / z)``; both are split at the
    branch point ``ks = k2``. Returns two lists of (lo, hi) array pairs.
    """
    ones = np.ones_like(k1)
    u_max = np.arccosh(np.maximum(20.0, 18.0 / (k1 * z)))
    ratio = k2_over_k1
    if ratio < 1.0:
        cut = float(np.arcsin(ratio))
        prop = [(0.0 * ones, cut * ones), (cut * ones, 0.5 * np.pi * ones)]
    else:
        prop = [(0.0 * ones, 0.5 * np.pi * ones)]
    if ratio > 1.0:
        cut = float(np.arccosh(ratio)) * ones
        cut = np.minimum(cut, u_max)
        evan = [(0.0 * ones, cut), (cut, u_max)]
    else:
        evan = [(0.0 * ones, u_max)]
    return prop, evan


def _reflected_sum(k1, k2, eps1, eps2, z, prop, evan, nodes):
    """Gauss-Legendre estimate of (G_xx, G_zz) for one interface."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    gxx = np.zeros(k1.shape, dtype=complex)
    gzz = np.zeros(k1.shape, dtype=complex)
    kk1 = k1[:, None]
    kk2 = k2[:, None]
    for kind, segs in (("prop", prop), ("evan", evan)):
        for lo, hi in segs:
            half = 0.5 * (hi - lo)[:, None]
            v = half * x + 0.5 * (hi + lo)[:, None]
            wt = half * w
            if kind == "prop":
                ks = kk1 * np.sin(v)
                kz1 = kk1 * np.cos(v)
                phase = np.exp(2j * kz1 * z)
                jac = ks  # (ks / kz1) dks/dt
            else:
                ks = kk1 * np.cosh(v)
                kz1 = 1j * kk1 * np.sinh(v)
                phase = np.exp(-2.0 * kk1 * np.sinh(v) * z)
                jac = -1j * ks  # (ks / kz1) dks/du
            kz2 = np.sqrt(kk2 * kk2 - ks * ks + 0j)
            kz2 = np.where(kz2.imag < 0, -kz2, kz2)
            rs = (kz1 - kz2) / (kz1 + kz2)
            rp = (eps2 * kz1 - eps1 * kz2) / (eps2 * kz1 + eps1 * kz2)
            gxx += np.sum(wt * jac * (kk1 * kk1 * rs - kz1 * kz1 * rp) * phase, axis=1)
            gzz += np.sum(wt * jac * ks * ks * rp * phase, axis=1)
    return 1j / (8.0 * np.pi) * gxx, 1j / (4.0 * np.pi) * gzz


def reflected_green(z, wavelength, eps_m, eps_substrate, nodes=64, tol=1e-7, max_nodes=8192):
    """Reflected Green tensor of a planar interface at the dipole position.

    The dipole sits a distance ``z`` above the interface in a medium of
    permittivity ``eps_m``. Returns ``(G_xx, G_zz)``, each with the shape
    of ``wavelength``; the tensor is diagonal with ``G_yy = G_xx``. The
    angular-spectrum integrals are evaluated by Gauss-Legendre quadrature
    whose node count is doubled until two successive estimates agree to
    ``tol`` relative.

    Raises
    ------
    ConvergenceError
        Agreement not reached within ``max_nodes``; carries the last
        estimate and the achieved relative difference.
    """
    if not z > 0:
        raise ValueError("distance to the interface must be positive")
    wl = np.asarray(wavelength, dtype=float)
    shape = wl.shape
    if complex(eps_substrate) == eps_m:
        zero = np.zeros(shape, dtype=complex)
        return zero, zero.copy()
    wl = wl.ravel()
    k0 = 2.0 * np.pi / wl
    k1 = k0 * np.sqrt(eps_m)
    eps2 = complex(eps_substrate)
    k2 = k0 * np.sqrt(eps2)
    prop, evan = _segments(k1, float(np.sqrt(eps2).real / np.sqrt(eps_m)), z)
    prev = _reflected_sum(k1, k2, eps_m, eps2, z, prop, evan, nodes)
    n = nodes
    diff = np.inf
    while n < max_nodes:
        n *= 2
        cur = _reflected_sum(k1, k2, eps_m, eps2, z, prop, evan, n)
        scale = np.maximum(np.maximum(np.abs(cur[0]), np.abs(cur[1])), 1e-12 * k1**3)
        diff = float(np.max(np.maximum(np.abs(cur[0] - prev[0]), np.abs(cur[1] - prev[1])) / scale))
        if diff < tol:
            return cur[0].reshape(shape), cur[1].reshape(shape)
        prev = cur
    raise ConvergenceError(
        f"reflected Green function not converged at z={z:g} nm "
        f"(relative change {diff:.2e} > {tol:.0e} with {n} nodes)",
        estimate=prev, bound=diff,
    )


def static_image_green(z, eps_m, eps_substrate):
    """Near-zone limit of (G_xx, G_zz) of :func:`reflected_green`."""
    beta = image_factor(eps_substrate, eps_m)
    s = 2.0 * z
    return beta / (4.0 * np.pi * s**3), 2.0 * beta / (4.0 * np.pi * s**3)


def dipole_between_mirrors_shift(fixed_gap, scan_gaps, eps_m, eps_lower, eps_upper,
                                 orientation="perpendicular", sphere=None, grid=DEFAULT_GRID,
                                 nodes=64, tol=1e-7, window=None):
    """Peak shift of a dipole between two planar surfaces.

    The dipole sits ``fixed_gap`` above the lower surface (the particle
    radius for a sphere resting on it) and ``scan_gap + radius`` below the
    upper one. Each surface contributes its reflected Green function,
    single bounce only. The dressed polarizability
    ``alpha / (1 - alpha G_R)`` gives the spectrum, and the shift is the
    fitted peak relative to the isolated particle.

    Parameters
    ----------
    fixed_gap : float
        Dipole-to-lower-surface distance, nm.
    scan_gaps : array_like
        Upper-surface-to-particle gaps, nm.
    orientation : {"perpendicular", "parallel"}
        Dipole orientation relative to the surfaces.
    sphere : Sphere, optional
        Defaults to a gold sphere of radius ``fixed_gap``.
    nodes : int
        Starting Gauss-Legendre nodes per segment (doubled until converged).

    Returns
    -------
    ShiftCurve
        Separation kind ``gap``. ``meta`` records the single-interface
        (lower surface only) shift.
    """
    _check_orientation(orientation)
    if not fixed_gap > 0:
        raise ValueError("fixed_gap must be positive")
    scan_gaps = np.atleast_1d(np.asarray(scan_gaps, dtype=float))
    if np.any(scan_gaps <= 0):
        raise ValueError("scan gaps must be positive")
    sphere = sphere or gold_sphere(2.0 * fixed_gap)
    wl = np.asarray(grid, dtype=float)
    comp = 1 if orientation == "perpendicular" else 0

    def green(z, eps_sub):
        if eps_sub == eps_m:
            return np.zeros(wl.shape, dtype=complex)
        return reflected_green(z, wl, eps_m, eps_sub, nodes, tol)[comp]

    g_lower = green(fixed_gap, eps_lower)
    ref = _renormalized_spectrum(sphere, eps_m, wl, 0.0)
    lower_only = spectra.fit_peak(_renormalized_spectrum(sphere, eps_m, wl, g_lower), window)
    series = []
    for gap in scan_gaps:
        g = g_lower + green(gap + sphere.radius, eps_upper)
        series.append((gap, _renormalized_spectrum(sphere, eps_m, wl, g)))
    curve = spectra.shift_series(series, ref, window, separation_kind="gap")
    ref_peak = curve.reference_peak
    return ShiftCurve(curve.separations, curve.peak_shift, ref_peak, "gap", curve.flags, {
        "model": "dipole between two surfaces",
        "orientation": orientation,
        "fixed_gap_nm": f"{fixed_gap:g}",
        "lower_only_shift_nm": f"{lower_only.lambda_peak - ref_peak:.6g}",
        "eps_m": f"{eps_m:g}",
    })


# trajectory-driven pair scans

@dataclass(frozen=True)
class PairScanGeometry:
    """Two spheres on a substrate, one held by the scanning probe.

    The fixed sphere rests at the origin (center at height R); the moving
    sphere center is at ``lateral * scan_axis`` and height ``R + h`` where
    ``h`` is the trajectory height (vertical offset included). Samples whose
    raw height exceeds ``lift_threshold`` use ``eps_lifted``.
    """

    diameter: float = 100.0
    material: object = None
    eps_contact: float = 1.3924
    eps_lifted: float = 1.21
    lift_threshold: float = 5.0
    scan_axis: tuple = (1.0, 0.0, 0.0)
    extra: dict = field(default_factory=dict)

    def eps_for(self, raw_height):
        return self.eps_lifted if raw_height > self.lift_threshold else self.eps_contact

    def spheres(self, lateral, height):
        mat = self.material or johnson_christy_gold()
        r = 0.5 * self.diameter
        axis = np.asarray(self.scan_axis, dtype=float)
        fixed = Sphere(self.diameter, mat, (0.0, 0.0, r))
        pos = lateral * axis + np.array([0.0, 0.0, r + height])
        return fixed, Sphere(self.diameter, mat, tuple(pos))


def trajectory_pair_scan(traj: ScanTrajectory, geometry: PairScanGeometry, ill: Illumination,
                         grid=DEFAULT_GRID):
    """Pair spectrum at every trajectory sample.

    Returns
    -------
    list of (float, Spectrum)
        Projected center-to-center distance (the lateral offset) and the
        pair spectrum.

    Raises
    ------
    GeometryError
        The spheres overlap at some sample (the index is named).
    """
    out = []
    for i, (x, h) in enumerate(zip(traj.lateral, traj.heights)):
        eps = geometry.eps_for(h - traj.vertical_offset)
        s1, s2 = geometry.spheres(x, h)
        try:
            spec = pair_spectrum(DipoleScatterer(s1, eps), DipoleScatterer(s2, eps), ill, grid)
        except GeometryError as exc:
            raise GeometryError(f"trajectory sample {i} (lateral {x:g} nm): {exc}") from None
        out.append((float(x), spec))
    return out


def trajectory_shift_curve(traj, geometry, ill, grid=DEFAULT_GRID, window=None):
    """Shift curve of a trajectory scan relative to the isolated particle in contact."""
    scan = trajectory_pair_scan(traj, geometry, ill, grid)
    fixed, _ = geometry.spheres(0.0, 0.0)
    ref = single_spectrum(DipoleScatterer(fixed, geometry.eps_contact), grid)
    return spectra.shift_series(scan, ref, window, separation_kind="projected")
