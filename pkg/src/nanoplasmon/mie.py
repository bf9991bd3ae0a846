"""Mie scattering by a homogeneous sphere and its dipolar approximations.

Lengths are in nm, polarizabilities in nm**3 and cross sections in nm**2.
The polarizability convention is ``alpha = (pi D**3 / 2) (eps_p - eps_m) /
(eps_p + 2 eps_m)``, i.e. the induced moment divided by the exciting field
and by the medium permittivity, so that the scattering cross section is
``(2 pi)**3 eps_m**2 |alpha|**2 / (3 lambda**4)``.

Mie coefficients follow Bohren & Huffman with the ``exp(-i omega t)``
convention: the logarithmic derivative D_n(mx) by downward recurrence,
psi_n and chi_n by upward recurrence, Wiscombe truncation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, NumericError, SingularityError
from .materials import eval_permittivity
from .spectrum import Spectrum


@dataclass(frozen=True)
class Sphere:
    """Homogeneous sphere: diameter (nm), dielectric model, center (nm)."""

    diameter: float
    material: object
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.diameter > 0:
            raise ValueError(f"sphere diameter must be positive, got {self.diameter}")
        c = tuple(float(v) for v in self.center)
        if len(c) != 3:
            raise ValueError("sphere center must be a 3-vector")
        object.__setattr__(self, "center", c)

    @property
    def radius(self):
        return 0.5 * self.diameter

    def moved(self, center):
        return Sphere(self.diameter, self.material, tuple(center))

    def permittivity(self, wavelength):
        return eval_permittivity(self.material, wavelength)


def _check_eps_m(eps_m):
    if not eps_m > 0:
        raise ValueError(f"medium permittivity must be positive, got {eps_m}")


def clausius_mossotti_alpha(diameter, eps_p, eps_m):
    """Quasi-static polarizability for a given particle permittivity."""
    eps_p = np.asarray(eps_p, dtype=complex)
    denom = eps_p + 2.0 * eps_m
    if np.any(denom == 0):
        raise SingularityError("eps_p = -2 eps_m: quasi-static polarizability diverges")
    return 0.5 * np.pi * diameter**3 * (eps_p - eps_m) / denom


def quasistatic_polarizability(sphere, eps_m, wavelength):
    """Quasi-static dipole polarizability of ``sphere`` in a medium ``eps_m``.

    Raises
    ------
    SingularityError
        At an exact lossless Froehlich condition ``eps_p = -2 eps_m``.
    """
    _check_eps_m(eps_m)
    return clausius_mossotti_alpha(sphere.diameter, sphere.permittivity(wavelength), eps_m)


def radiative_correction(alpha, diameter, eps_m, wavelength):
    """Dynamic depolarization and radiation damping applied to ``alpha``."""
    wl = np.asarray(wavelength, dtype=float)
    numer = 1.0 - np.pi**2 * eps_m * diameter**2 / (10.0 * wl**2)
    depol = 2.0 * np.pi * eps_m / (diameter * wl**2)
    damping = 4.0 * np.pi**2 * eps_m**1.5 / (3.0 * wl**3)
    return alpha * numer / (1.0 - depol * alpha - 1j * damping * alpha)


def effective_polarizability(sphere, eps_m, wavelength):
    """Polarizability with radiation damping and dynamic depolarization."""
    alpha = quasistatic_polarizability(sphere, eps_m, wavelength)
    return radiative_correction(alpha, sphere.diameter, eps_m, wavelength)


def radiation_damping_bound(diameter, eps_m, wavelength):
    """Upper bound on ``Im(1 / alpha_eff)`` for any passive particle."""
    wl = np.asarray(wavelength, dtype=float)
    numer = 1.0 - np.pi**2 * eps_m * diameter**2 / (10.0 * wl**2)
    return -(4.0 * np.pi**2 * eps_m**1.5 / (3.0 * wl**3)) / numer


def cross_section_from_alpha(alpha, eps_m, wavelength):
    """Dipole scattering cross section (nm**2) for polarizability ``alpha``."""
    wl = np.asarray(wavelength, dtype=float)
    if np.any(wl <= 0):
        raise ValueError("wavelength must be positive")
    return (2.0 * np.pi) ** 3 * eps_m**2 * np.abs(alpha) ** 2 / (3.0 * wl**4)


def dipole_spectrum(sphere, eps_m, grid, effective=True):
    """Scattering spectrum of the dipole model (effective or quasi-static)."""
    grid = np.asarray(grid, dtype=float)
    alpha = (effective_polarizability if effective else quasistatic_polarizability)(
        sphere, eps_m, grid
    )
    meta = {
        "model": "alpha_eff" if effective else "alpha_quasistatic",
        "diameter_nm": sphere.diameter,
        "eps_m": eps_m,
    }
    return Spectrum(grid, cross_section_from_alpha(alpha, eps_m, grid), "scattering", meta)


# --------------------------------------------------------------------------
# Mie series


def size_parameter(diameter, eps_m, wavelength):
    return np.pi * diameter * math.sqrt(eps_m) / wavelength


def n_terms(x):
    """Wiscombe truncation ``ceil(x + 4 x**(1/3) + 2)``."""
    return int(math.ceil(x + 4.0 * x ** (1.0 / 3.0) + 2.0))


def _coefficients(m, x, nstop):
    mx = m * x
    nmx = int(max(nstop, abs(mx))) + 16
    d = np.zeros(nmx + 1, dtype=complex)
    for n in range(nmx, 0, -1):
        d[n - 1] = n / mx - 1.0 / (d[n] + n / mx)

    psi = np.zeros(nstop + 1)
    chi = np.zeros(nstop + 1)
    psi_m1, psi[0] = math.cos(x), math.sin(x)
    chi_m1, chi[0] = -math.sin(x), math.cos(x)
    for n in range(1, nstop + 1):
        prev_psi = psi_m1 if n == 1 else psi[n - 2]
        prev_chi = chi_m1 if n == 1 else chi[n - 2]
        psi[n] = (2 * n - 1) / x * psi[n - 1] - prev_psi
        chi[n] = (2 * n - 1) / x * chi[n - 1] - prev_chi
    xi = psi - 1j * chi

    n = np.arange(1, nstop + 1)
    da = d[1 : nstop + 1] / m + n / x
    db = d[1 : nstop + 1] * m + n / x
    with np.errstate(all="ignore"):
        a = (da * psi[1:] - psi[:-1]) / (da * xi[1:] - xi[:-1])
        b = (db * psi[1:] - psi[:-1]) / (db * xi[1:] - xi[:-1])
    bad = ~(np.isfinite(a) & np.isfinite(b))
    if np.any(bad):
        raise NumericError(f"Mie recurrence overflow at n={int(n[bad][0])}")
    return a, b


def mie_coefficients(sphere, eps_m, wavelength, nstop=None):
    """External Mie coefficients ``a_n, b_n`` for n = 1..N at one wavelength.

    Parameters
    ----------
    sphere : Sphere
    eps_m : float
        Permittivity of the surrounding medium.
    wavelength : float
        Vacuum wavelength in nm.
    nstop : int, optional
        Number of terms; defaults to the Wiscombe criterion.

    Returns
    -------
    a, b : ndarray of complex, shape (N,)
    """
    _check_eps_m(eps_m)
    x = size_parameter(sphere.diameter, eps_m, float(wavelength))
    if not x > 0:
        raise ValueError("size parameter must be positive")
    m = np.sqrt(complex(sphere.permittivity(float(wavelength))) / eps_m)
    if nstop is None:
        nstop = n_terms(x)
    return _coefficients(m, x, nstop)


def _cross_sections_at(sphere, eps_m, wavelength, extra_terms=0):
    x = size_parameter(sphere.diameter, eps_m, wavelength)
    a, b = mie_coefficients(sphere, eps_m, wavelength, nstop=n_terms(x) + extra_terms)
    n = np.arange(1, a.size + 1)
    lam_m = wavelength / math.sqrt(eps_m)
    pref = lam_m**2 / (2.0 * np.pi)
    sca = pref * float(np.sum((2 * n + 1) * (np.abs(a) ** 2 + np.abs(b) ** 2)))
    ext = pref * float(np.sum((2 * n + 1) * (a + b).real))
    return sca, ext


def mie_cross_sections(sphere, eps_m, grid, extra_terms=0):
    """Scattering, extinction and absorption spectra over ``grid`` (nm).

    Each wavelength is evaluated independently, so results at a given
    wavelength do not depend on the rest of the grid.

    Returns
    -------
    dict
        ``{"scattering": Spectrum, "extinction": Spectrum, "absorption": Spectrum}``
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty wavelength grid")
    sphere.permittivity(grid)  # range check up front
    sca = np.empty(grid.size)
    ext = np.empty(grid.size)
    for i, wl in enumerate(grid):
        sca[i], ext[i] = _cross_sections_at(sphere, eps_m, float(wl), extra_terms)
    meta = {"model": "mie", "diameter_nm": sphere.diameter, "eps_m": eps_m}
    return {
        "scattering": Spectrum(grid, sca, "scattering", dict(meta)),
        "extinction": Spectrum(grid, np.maximum(ext, 0.0), "extinction", dict(meta)),
        "absorption": Spectrum(grid, ext - sca, "absorption", dict(meta)),
    }


def mie_spectrum(sphere, eps_m, grid, kind="scattering"):
    """Mie cross-section spectrum of one ``kind``."""
    return mie_cross_sections(sphere, eps_m, grid)[kind]


# --------------------------------------------------------------------------
# Fields


def _angular(nmax, mu):
    """pi_n and tau_n for n = 1..nmax, broadcast over ``mu``."""
    mu = np.asarray(mu, dtype=float)
    pi = np.zeros((nmax + 1,) + mu.shape)
    tau = np.zeros_like(pi)
    pi[1] = 1.0
    tau[1] = mu
    for n in range(2, nmax + 1):
        pi[n] = (2 * n - 1) / (n - 1) * mu * pi[n - 1] - n / (n - 1) * pi[n - 2]
        tau[n] = n * mu * pi[n] - (n + 1) * pi[n - 1]
    return pi[1:], tau[1:]


def _hankel_terms(nmax, rho):
    """h_n(rho) and (rho h_n)'/rho for n = 1..nmax (spherical Hankel, first kind)."""
    rho = np.asarray(rho, dtype=float)
    h = np.zeros((nmax + 1,) + rho.shape, dtype=complex)
    h[0] = -1j * np.exp(1j * rho) / rho
    if nmax >= 1:
        h[1] = -np.exp(1j * rho) * (rho + 1j) / rho**2
    for n in range(2, nmax + 1):
        h[n] = (2 * n - 1) / rho * h[n - 1] - h[n - 2]
    n = np.arange(1, nmax + 1).reshape((-1,) + (1,) * rho.ndim)
    dh = h[:-1] - n * h[1:] / rho
    return h[1:], dh


def scattered_field(sphere, eps_m, wavelength, points, orders=None):
    """Scattered electric field at Cartesian ``points`` (..., 3), nm.

    The incident field is a unit-amplitude plane wave propagating along +z
    and polarized along x. ``orders`` restricts the sum to the given set of
    (kind, n) with kind in {"a", "b"}, e.g. ``{("a", 1)}`` for the electric
    dipole alone.

    Raises
    ------
    GeometryError
        If any point lies inside the sphere.
    """
    pts = np.asarray(points, dtype=float) - np.asarray(sphere.center)
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r < sphere.radius * (1.0 - 1e-12)):
        raise GeometryError("field requested at a point inside the sphere")
    a, b = mie_coefficients(sphere, eps_m, wavelength)
    nmax = a.size
    k = 2.0 * np.pi * math.sqrt(eps_m) / wavelength
    rho = k * r
    safe_r = np.where(r > 0, r, 1.0)
    cos_t = np.clip(pts[..., 2] / safe_r, -1.0, 1.0)
    sin_t = np.sqrt(1.0 - cos_t**2)
    phi = np.arctan2(pts[..., 1], pts[..., 0])
    cos_p, sin_p = np.cos(phi), np.sin(phi)

    pi, tau = _angular(nmax, cos_t)
    h, dh = _hankel_terms(nmax, rho)
    n = np.arange(1, nmax + 1).reshape((-1,) + (1,) * r.ndim)
    en = (1j**n) * (2 * n + 1) / (n * (n + 1))
    an = a.reshape(n.shape)
    bn = b.reshape(n.shape)
    if orders is not None:
        mask_a = np.array([("a", i) in orders for i in range(1, nmax + 1)]).reshape(n.shape)
        mask_b = np.array([("b", i) in orders for i in range(1, nmax + 1)]).reshape(n.shape)
        an = np.where(mask_a, an, 0)
        bn = np.where(mask_b, bn, 0)

    # E_s = sum E_n (i a_n N_e1n - b_n M_o1n)
    e_r = np.sum(en * 1j * an * n * (n + 1) * sin_t * pi * h / rho, axis=0) * cos_p
    e_t = np.sum(en * (1j * an * tau * dh - bn * pi * h), axis=0) * cos_p
    e_p = np.sum(en * (-1j * an * pi * dh + bn * tau * h), axis=0) * sin_p
    return _spherical_to_cartesian(e_r, e_t, e_p, cos_t, sin_t, cos_p, sin_p)


def _spherical_to_cartesian(e_r, e_t, e_p, cos_t, sin_t, cos_p, sin_p):
    ex = e_r * sin_t * cos_p + e_t * cos_t * cos_p - e_p * sin_p
    ey = e_r * sin_t * sin_p + e_t * cos_t * sin_p + e_p * cos_p
    ez = e_r * cos_t - e_t * sin_t
    return np.stack([ex, ey, ez], axis=-1)


def amplitude_functions(sphere, eps_m, wavelength, theta):
    """Scattering amplitudes S1(theta), S2(theta)."""
    a, b = mie_coefficients(sphere, eps_m, wavelength)
    nmax = a.size
    pi, tau = _angular(nmax, np.cos(np.asarray(theta, dtype=float)))
    n = np.arange(1, nmax + 1).reshape((-1,) + (1,) * np.ndim(theta))
    w = (2 * n + 1) / (n * (n + 1))
    an, bn = a.reshape(n.shape), b.reshape(n.shape)
    s1 = np.sum(w * (an * pi + bn * tau), axis=0)
    s2 = np.sum(w * (an * tau + bn * pi), axis=0)
    return s1, s2


def far_field_pattern(sphere, eps_m, wavelength, theta, phi):
    """Far-zone scattered field with the ``exp(ikr)/r`` factor removed.

    Returns the (theta, phi) components in nm (field per unit incident
    amplitude times distance); ``|E|**2`` integrated over solid angle gives
    the scattering cross section.
    """
    k = 2.0 * np.pi * math.sqrt(eps_m) / wavelength
    s1, s2 = amplitude_functions(sphere, eps_m, wavelength, theta)
    e_t = 1j / k * np.cos(phi) * s2
    e_p = -1j / k * np.sin(phi) * s1
    return e_t, e_p


def radiated_cross_section(sphere, eps_m, wavelength, n_theta=64, n_phi=64):
    """Scattering cross section by Gauss-Legendre quadrature of the far field."""
    mu, wt = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(mu)
    phi = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    e_t, e_p = far_field_pattern(sphere, eps_m, wavelength, tt, pp)
    intensity = np.abs(e_t) ** 2 + np.abs(e_p) ** 2
    return float(np.sum(wt[:, None] * intensity) * 2.0 * np.pi / n_phi)


AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True, eq=False)
class FieldMap:
    """Complex field sampled on a rectangular grid in a coordinate plane.

    ``field`` has shape (n_v, n_u, 3): rows follow the second axis of
    ``plane``, columns the first, last index the Cartesian component.
    """

    plane: tuple[str, str]
    offset: float
    spacing: float
    u: np.ndarray
    v: np.ndarray
    field: np.ndarray
    wavelength: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        if self.field.shape[0] < 2 or self.field.shape[1] < 2:
            raise ValueError("field map must be at least 2x2")

    @property
    def amplitude(self):
        return np.sqrt(np.sum(np.abs(self.field) ** 2, axis=-1))

    def to_text(self):
        lines = [
            f"# plane: {self.plane[0]}{self.plane[1]}",
            f"# offset_nm: {self.offset}",
            f"# spacing_nm: {self.spacing}",
            f"# wavelength_nm: {self.wavelength}",
            f"# origin_nm: {self.u[0]} {self.v[0]}",
            f"# shape: {self.field.shape[0]} {self.field.shape[1]}",
        ]
        lines += [f"# {k}: {v}" for k, v in self.meta.items()]
        lines.append("# rows: v index; columns: |E| along u")
        body = "\n".join(" ".join(f"{val:.6g}" for val in row) for row in self.amplitude)
        return "\n".join(lines) + "\n" + body.replace("nan", "NaN") + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())


def _plane_points(plane, offset, half_width, spacing, center):
    iu, iv = AXES[plane[0]], AXES[plane[1]]
    if iu == iv:
        raise ValueError("plane axes must differ")
    normal = 3 - iu - iv
    n = int(round(half_width / spacing))
    coords = np.arange(-n, n + 1) * spacing
    uu, vv = np.meshgrid(coords + center[iu], coords + center[iv])
    pts = np.zeros(uu.shape + (3,))
    pts[..., iu] = uu
    pts[..., iv] = vv
    pts[..., normal] = center[normal] + offset
    return pts, coords + center[iu], coords + center[iv]


def near_field_map(sphere, eps_m, wavelength, plane=("x", "z"), offset=0.0,
                   half_width=None, spacing=2.0, interior="raise", orders=None):
    """Scattered near field on a plane through (or offset from) the sphere center.

    ``interior="mask"`` fills points inside the sphere with NaN instead of
    raising :class:`GeometryError`.
    """
    if half_width is None:
        half_width = 1.5 * sphere.diameter
    pts, u, v = _plane_points(plane, offset, half_width, spacing, sphere.center)
    inside = np.linalg.norm(pts - np.asarray(sphere.center), axis=-1) < sphere.radius
    if np.any(inside):
        if interior != "mask":
            raise GeometryError("map plane intersects the sphere interior")
        pts = np.where(inside[..., None], np.asarray(sphere.center) + [sphere.radius, 0, 0], pts)
    field_ = scattered_field(sphere, eps_m, wavelength, pts, orders=orders)
    field_[inside] = np.nan
    return FieldMap(tuple(plane), offset, spacing, u, v, field_, wavelength,
                    {"region": "near", "diameter_nm": sphere.diameter, "eps_m": eps_m})


def far_field_map(sphere, eps_m, wavelength, plane=("x", "z"), offset=0.0,
                  half_width=None, spacing=None, interior="raise"):
    """Scattered field on a plane using the asymptotic radiation form."""
    if spacing is None:
        spacing = wavelength / 20.0
    if half_width is None:
        half_width = 5.0 * wavelength
    pts, u, v = _plane_points(plane, offset, half_width, spacing, sphere.center)
    rel = pts - np.asarray(sphere.center)
    r = np.linalg.norm(rel, axis=-1)
    inside = r < sphere.radius
    if np.any(inside) and interior != "mask":
        raise GeometryError("map plane intersects the sphere interior")
    r_safe = np.where(inside | (r == 0), sphere.radius, r)
    cos_t = np.clip(rel[..., 2] / r_safe, -1.0, 1.0)
    sin_t = np.sqrt(1.0 - cos_t**2)
    phi = np.arctan2(rel[..., 1], rel[..., 0])
    e_t, e_p = far_field_pattern(sphere, eps_m, wavelength, np.arccos(cos_t), phi)
    k = 2.0 * np.pi * math.sqrt(eps_m) / wavelength
    phase = np.exp(1j * k * r_safe) / r_safe
    field_ = _spherical_to_cartesian(
        np.zeros_like(e_t), e_t * phase, e_p * phase, cos_t, sin_t, np.cos(phi), np.sin(phi)
    )
    field_[inside] = np.nan
    return FieldMap(tuple(plane), offset, spacing, u, v, field_, wavelength,
                    {"region": "far", "diameter_nm": sphere.diameter, "eps_m": eps_m})
