import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import spherical_jn, spherical_yn

from nanoplasmon import mie
from nanoplasmon.errors import GeometryError, SingularityError
from nanoplasmon.materials import Constant, DrudeLorentz
from nanoplasmon.mie import Sphere

AIR = 1.0
GRID = np.arange(450.0, 750.5, 0.5)


def bessel_oracle(m, x, nstop):
    """Mie a_n, b_n straight from scipy's spherical Bessel functions."""
    n = np.arange(1, nstop + 1)

    def psi(z):
        return z * spherical_jn(n, z)

    def dpsi(z):
        return spherical_jn(n, z) + z * spherical_jn(n, z, derivative=True)

    def xi(z):
        return z * (spherical_jn(n, z) + 1j * spherical_yn(n, z))

    def dxi(z):
        h = spherical_jn(n, z) + 1j * spherical_yn(n, z)
        dh = spherical_jn(n, z, derivative=True) + 1j * spherical_yn(n, z, derivative=True)
        return h + z * dh

    mx = m * x
    a = (m * psi(mx) * dpsi(x) - psi(x) * dpsi(mx)) / (m * psi(mx) * dxi(x) - xi(x) * dpsi(mx))
    b = (psi(mx) * dpsi(x) - m * psi(x) * dpsi(mx)) / (psi(mx) * dxi(x) - m * xi(x) * dpsi(mx))
    return a, b


@pytest.mark.parametrize("wl", [450.0, 530.0, 600.0, 750.0])
@pytest.mark.parametrize("diameter, eps_m", [(100.0, 1.0), (60.0, 1.3924), (150.0, 2.25)])
def test_coefficients_match_bessel_oracle(gold, wl, diameter, eps_m):
    sphere = Sphere(diameter, gold)
    a, b = mie.mie_coefficients(sphere, eps_m, wl)
    m = np.sqrt(complex(gold.permittivity(wl)) / eps_m)
    x = math.pi * diameter * math.sqrt(eps_m) / wl
    ao, bo = bessel_oracle(m, x, a.size)
    np.testing.assert_allclose(a, ao, rtol=1e-9, atol=1e-14)
    np.testing.assert_allclose(b, bo, rtol=1e-9, atol=1e-14)


def test_index_matched_coefficients_vanish():
    a, b = mie.mie_coefficients(Sphere(100.0, Constant(1.69)), 1.69, 550.0)
    assert np.all(np.abs(a) < 1e-14) and np.all(np.abs(b) < 1e-14)


def test_truncation_rule():
    assert mie.n_terms(1.0) == math.ceil(1 + 4 + 2)
    x = 0.5929
    assert mie.n_terms(x) == math.ceil(x + 4 * x ** (1 / 3) + 2)


def test_small_particle_series():
    eps_p = -5.0 + 2.0j
    sphere = Sphere(1.0, _FixedEps(eps_p))
    wl = math.pi * 1.0 / 0.01  # x = 0.01 in air
    a, _ = mie.mie_coefficients(sphere, 1.0, wl)
    x = 0.01
    m2 = eps_p
    series = -1j * (2 * x**3 / 3) * (m2 - 1) / (m2 + 2)
    assert abs(a[0] - series) / abs(series) < 1e-3
    # consistent with the quasi-static polarizability: alpha = 6 pi i a_1 / k^3
    k = 2 * math.pi / wl
    alpha = mie.quasistatic_polarizability(sphere, 1.0, wl)
    assert abs(6j * math.pi * a[0] / k**3 - alpha) / abs(alpha) < 1e-3


def test_dipole_dominates_100nm(gold):
    a, b = mie.mie_coefficients(Sphere(100.0, gold), AIR, 550.0)
    assert abs(a[0]) > 10 * abs(a[1])
    assert abs(a[0]) > 10 * abs(b[0])


class _FixedEps:
    window = (0.0, math.inf)

    def __init__(self, eps):
        self.eps = eps

    def permittivity(self, wavelength):
        return np.full(np.shape(wavelength), self.eps, dtype=complex)[()]


def test_lossless_sphere_absorbs_nothing():
    sphere = Sphere(200.0, Constant(2.25))
    cs = mie.mie_cross_sections(sphere, 1.0, np.linspace(400, 800, 41))
    rel = np.abs(cs["absorption"].values) / cs["scattering"].values
    assert np.all(rel < 1e-6)


def test_gold_100nm_single_peak(gold):
    sca = mie.mie_spectrum(Sphere(100.0, gold), AIR, GRID).values
    peak = GRID[np.argmax(sca)]
    assert 500.0 <= peak <= 600.0
    # single local maximum inside the 450-750 nm window
    interior = (sca[1:-1] > sca[:-2]) & (sca[1:-1] > sca[2:])
    assert interior.sum() == 1


def test_peak_red_shifts_with_medium_index(gold):
    sphere = Sphere(100.0, gold)
    p1 = GRID[np.argmax(mie.mie_spectrum(sphere, 1.0, GRID).values)]
    p2 = GRID[np.argmax(mie.mie_spectrum(sphere, 1.3924, GRID).values)]
    assert p2 > p1


# ----- dipolar approximations


def test_alpha_index_matched_zero():
    assert mie.quasistatic_polarizability(Sphere(50.0, Constant(2.0)), 2.0, 500.0) == 0


def test_froehlich_exact_singularity():
    with pytest.raises(SingularityError):
        mie.clausius_mossotti_alpha(10.0, -2.0 + 0j, 1.0)


def test_froehlich_divergence_lossless_drude():
    # eps = 1 - wp^2/w^2 crosses -2 at w = wp/sqrt(3)
    wp = 2 * math.pi * 2.998e8 * math.sqrt(3.0) / 500e-9
    sphere = Sphere(20.0, DrudeLorentz(1.0, wp, 0.0, ()))
    from nanoplasmon.materials import omega_to_wavelength
    wl_f = float(omega_to_wavelength(wp / math.sqrt(3.0)))
    near = [abs(mie.quasistatic_polarizability(sphere, 1.0, wl_f + d)) for d in (1.0, 0.1, 0.01)]
    assert near[0] < near[1] < near[2]
    assert near[2] / near[0] > 50


def test_alpha_100nm_direct_arithmetic(gold):
    wl = 550.0
    eps = complex(gold.permittivity(wl))
    direct = math.pi * 100.0**3 / 2.0 * (eps - 1.0) / (eps + 2.0)
    got = mie.quasistatic_polarizability(Sphere(100.0, gold), 1.0, wl)
    assert abs(got - direct) / abs(direct) < 1e-12


def test_alpha_eff_quasistatic_limit(gold):
    sphere = Sphere(1.0, gold)
    wl = np.linspace(450, 750, 31)
    a0 = mie.quasistatic_polarizability(sphere, 1.0, wl)
    a1 = mie.effective_polarizability(sphere, 1.0, wl)
    assert np.all(np.abs(a1 - a0) / np.abs(a0) < 1e-3)


@pytest.mark.xfail(strict=True, reason="effective-polarizability peak overshoots Mie for D=100 nm in air")
def test_alpha_eff_peak_tracks_mie(gold):
    sphere = Sphere(100.0, gold)
    p_mie = GRID[np.argmax(mie.mie_spectrum(sphere, AIR, GRID).values)]
    p_eff = GRID[np.argmax(mie.dipole_spectrum(sphere, AIR, GRID).values)]
    assert abs(p_eff - p_mie) <= 5.0


@pytest.mark.xfail(strict=True, reason="effective-polarizability peak overshoots Mie for D=100 nm in air")
def test_alpha_eff_peak_amplitude(gold):
    sphere = Sphere(100.0, gold)
    sca = mie.mie_spectrum(sphere, AIR, GRID).values
    i = np.argmax(sca)
    eff = mie.dipole_spectrum(sphere, AIR, GRID).values
    assert abs(eff[i] - sca[i]) / sca[i] <= 0.10


def test_alpha_eff_radiation_damping_bound(gold, gold_dl):
    # Im(1/alpha) <= 0 for passive eps_p, so Im(1/alpha_eff) <= -B/(1-N)
    wl = np.arange(400.0, 900.0, 7.0)
    for diameter in (20.0, 60.0, 100.0):
        for material in (gold, gold_dl):
            for eps_m in (1.0, 1.3924, 2.25):
                inv = 1.0 / mie.effective_polarizability(Sphere(diameter, material), eps_m, wl)
                bound = mie.radiation_damping_bound(diameter, eps_m, wl)
                assert np.all(inv.imag <= bound * (1 - 1e-12))


def test_cross_section_from_alpha_basics():
    assert mie.cross_section_from_alpha(0.0, 1.0, 500.0) == 0.0
    s1 = mie.cross_section_from_alpha(1e5 + 2e4j, 1.3, 600.0)
    s2 = mie.cross_section_from_alpha(2 * (1e5 + 2e4j), 1.3, 600.0)
    assert s2 == pytest.approx(4 * s1, rel=1e-14)
    # standard Rayleigh form (8 pi / 3) k^4 R^6 |L|^2
    eps_p, R, wl = -4.0 + 1.5j, 20.0, 520.0
    L = (eps_p - 1) / (eps_p + 2)
    k = 2 * math.pi / wl
    rayleigh = 8 * math.pi / 3 * k**4 * R**6 * abs(L) ** 2
    alpha = mie.clausius_mossotti_alpha(2 * R, eps_p, 1.0)
    assert mie.cross_section_from_alpha(alpha, 1.0, wl) == pytest.approx(rayleigh, rel=1e-12)


@pytest.mark.xfail(strict=True, reason="effective-polarizability peak overshoots Mie for D=100 nm in air")
def test_cross_section_matches_mie_at_peak(gold):
    sphere = Sphere(100.0, gold)
    sca = mie.mie_spectrum(sphere, AIR, GRID).values
    i = np.argmax(sca)
    alpha = mie.effective_polarizability(sphere, AIR, GRID[i])
    assert abs(mie.cross_section_from_alpha(alpha, AIR, GRID[i]) - sca[i]) / sca[i] <= 0.10


# ----- invariants


@settings(max_examples=30, deadline=None)
@given(
    diameter=st.floats(5.0, 250.0),
    eps_m=st.floats(1.0, 2.5),
    wl=st.floats(400.0, 900.0),
)
def test_extinction_exceeds_scattering(gold_dl_static, diameter, eps_m, wl):
    cs = mie.mie_cross_sections(Sphere(diameter, gold_dl_static), eps_m, [wl])
    sca, ext = cs["scattering"].values[0], cs["extinction"].values[0]
    assert 0 <= sca <= ext * (1 + 1e-10)


@pytest.fixture(scope="module")
def gold_dl_static(gold_dl):
    return gold_dl


def test_quasistatic_convergence_10nm(gold):
    sphere = Sphere(10.0, gold)
    sca = mie.mie_spectrum(sphere, AIR, GRID).values
    i = np.argmax(sca)
    qs = mie.cross_section_from_alpha(mie.quasistatic_polarizability(sphere, AIR, GRID[i]), AIR, GRID[i])
    assert abs(qs - sca[i]) / sca[i] <= 0.02


def test_quasistatic_error_shrinks_with_size(gold):
    errors = []
    for d in (40.0, 20.0, 10.0, 5.0):
        sphere = Sphere(d, gold)
        wl = 520.0
        sca = mie.mie_spectrum(sphere, AIR, [wl]).values[0]
        qs = mie.cross_section_from_alpha(mie.quasistatic_polarizability(sphere, AIR, wl), AIR, wl)
        errors.append(abs(qs - sca) / sca)
    assert errors == sorted(errors, reverse=True)


def test_truncation_stability(gold):
    sphere = Sphere(100.0, gold)
    wl = np.linspace(450, 750, 13)
    base = mie.mie_cross_sections(sphere, AIR, wl)["scattering"].values
    more = mie.mie_cross_sections(sphere, AIR, wl, extra_terms=5)["scattering"].values
    assert np.all(np.abs(more - base) / base < 1e-8)


def test_grid_reciprocity(gold):
    sphere = Sphere(100.0, gold)
    coarse = np.arange(450.0, 751.0, 10.0)
    fine = np.arange(450.0, 750.5, 0.5)
    c = mie.mie_spectrum(sphere, AIR, coarse).values
    f = mie.mie_spectrum(sphere, AIR, fine).values
    idx = np.searchsorted(fine, coarse)
    assert np.array_equal(c, f[idx])


@pytest.mark.parametrize("wl", [500.0, 530.0, 650.0])
def test_far_field_power_equals_sigma(gold, wl):
    sphere = Sphere(100.0, gold)
    sca = mie.mie_spectrum(sphere, AIR, [wl]).values[0]
    assert abs(mie.radiated_cross_section(sphere, AIR, wl) - sca) / sca < 0.01


# ----- field maps


def test_far_field_null_along_polarization(gold):
    sphere = Sphere(100.0, gold)
    et_x, ep_x = mie.far_field_pattern(sphere, AIR, 530.0, np.pi / 2, 0.0)
    et_y, ep_y = mie.far_field_pattern(sphere, AIR, 530.0, np.pi / 2, np.pi / 2)
    along_x = abs(et_x) ** 2 + abs(ep_x) ** 2
    along_y = abs(et_y) ** 2 + abs(ep_y) ** 2
    assert along_x / along_y < 1e-2


def test_far_field_map_dipole_pattern(gold):
    sphere = Sphere(100.0, gold)
    fm = mie.far_field_map(sphere, AIR, 530.0, plane=("x", "y"), offset=0.0, interior="mask")
    amp = fm.amplitude
    mid = amp.shape[0] // 2
    # along x (row through the center) the far field nearly vanishes, along y it does not
    edge = 2
    assert amp[mid, edge] < 0.1 * amp[edge, mid]
    assert fm.spacing == pytest.approx(530.0 / 20)


def test_near_field_mirror_symmetry(gold):
    sphere = Sphere(100.0, gold)
    fm = mie.near_field_map(sphere, AIR, 530.0, plane=("x", "y"), offset=60.0)
    amp = fm.amplitude
    np.testing.assert_allclose(amp, amp[::-1, :], rtol=1e-12)
    assert fm.spacing == 2.0


def test_near_field_interior_rejected(gold):
    sphere = Sphere(100.0, gold)
    with pytest.raises(GeometryError):
        mie.near_field_map(sphere, AIR, 530.0, plane=("x", "z"))
    with pytest.raises(GeometryError):
        mie.scattered_field(sphere, AIR, 530.0, np.array([[10.0, 0.0, 0.0]]))
    fm = mie.near_field_map(sphere, AIR, 530.0, plane=("x", "z"), interior="mask")
    assert np.isnan(fm.amplitude[fm.amplitude.shape[0] // 2, fm.amplitude.shape[1] // 2])


def test_near_field_matches_far_field_at_large_r(gold):
    sphere = Sphere(100.0, gold)
    r = 200.0 * 530.0
    pts = np.array([[r * math.sin(0.7), 0.3 * r, r * math.cos(0.7)]])
    near = mie.scattered_field(sphere, AIR, 530.0, pts)[0]
    fm_pts = pts / np.linalg.norm(pts)
    theta = math.acos(fm_pts[0, 2])
    phi = math.atan2(fm_pts[0, 1], fm_pts[0, 0])
    et, ep = mie.far_field_pattern(sphere, AIR, 530.0, theta, phi)
    rr = np.linalg.norm(pts)
    assert abs(np.linalg.norm(near) - math.hypot(abs(et), abs(ep)) / rr) / (math.hypot(abs(et), abs(ep)) / rr) < 1e-2


def _surface_points(radius, n_theta=40, n_phi=80):
    mu, w = np.polynomial.legendre.leggauss(n_theta)
    th = np.arccos(mu)
    ph = np.linspace(0, 2 * np.pi, n_phi, endpoint=False)
    T, P = np.meshgrid(th, ph, indexing="ij")
    pts = radius * np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1)
    return pts, w


def test_near_field_multipole_fraction(gold):
    sphere = Sphere(100.0, gold)
    pts, w = _surface_points(50.0 * (1 + 1e-9))
    full = mie.scattered_field(sphere, AIR, 530.0, pts)
    dip = mie.scattered_field(sphere, AIR, 530.0, pts, orders={("a", 1)})
    intensity = lambda f: np.sum(w[:, None] * np.sum(np.abs(f) ** 2, -1))
    assert abs(intensity(full) / intensity(dip) - 1) <= 0.10
    peak = lambda f: np.max(np.linalg.norm(f, axis=-1))
    assert abs(peak(full) / peak(dip) - 1) <= 0.10


def test_field_map_text(tmp_path, gold):
    fm = mie.near_field_map(Sphere(100.0, gold), AIR, 530.0, plane=("x", "y"), offset=60.0,
                            half_width=20.0)
    path = tmp_path / "map.txt"
    fm.save(path)
    text = path.read_text().splitlines()
    assert text[0] == "# plane: xy"
    rows = [line for line in text if not line.startswith("#")]
    assert len(rows) == fm.field.shape[0]
