"""FDTD solver: boundaries, source, ADE, monitors and pair scans."""
import math
import warnings

import numpy as np
import pytest

from nanoplasmon import materials, mie
from nanoplasmon.coupled_dipole import PairScanGeometry
from nanoplasmon.errors import GeometryError, ResourceError
from nanoplasmon.fdtd import (
    GridSpec, PulseSpec, SceneConfig, build_scene, run_pair_scan,
    run_scattering, simulate, step,
)
from nanoplasmon.fdtd import core
from nanoplasmon.fdtd import kernels as kn
from nanoplasmon.materials import wavelength_to_omega
from nanoplasmon.trajectory import ScanTrajectory

C0 = 299792458.0
WL = np.array([500.0, 550.0, 600.0, 650.0, 700.0])


def _sf_mask(st, pad=2):
    """Scattered-field region outside the CPML."""
    m = np.ones(st.shape, bool)
    p = st.spec.pml + pad
    m[:p] = m[-p:] = False
    m[:, :p] = m[:, -p:] = False
    m[:, :, :p] = m[:, :, -p:] = False
    (i0, j0, k0), (i1, j1, k1) = st.tf
    m[i0 - 1:i1 + 2, j0 - 1:j1 + 2, k0 - 1:k1 + 2] = False
    return m


# --- validation of inputs ---------------------------------------------------

@pytest.mark.parametrize("kw", [{"cell": 0.0}, {"courant": 0.6}, {"pml": 5}, {"fill": "nearest"}])
def test_gridspec_rejects_invalid(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


def test_overlapping_spheres_raise_geometry_error():
    a = mie.Sphere(100.0, materials.Constant(4.0), (0.0, 0.0, 0.0))
    b = mie.Sphere(100.0, materials.Constant(4.0), (90.0, 0.0, 0.0))
    with pytest.raises(GeometryError):
        SceneConfig((a, b))


def test_memory_budget_raises_resource_error_with_estimate():
    s = mie.Sphere(100.0, materials.Constant(4.0))
    with pytest.raises(ResourceError) as info:
        build_scene(GridSpec(cell=2.0), SceneConfig((s,)), memory_budget=10 * 2**20)
    assert info.value.estimate_bytes > 10 * 2**20


def test_empty_scene_has_no_dispersive_cells():
    st = build_scene(GridSpec(cell=8.0), SceneConfig(extent=40.0), WL)
    assert st.dispersive_cells == 0
    assert st.ade_nodes == 0


def test_dispersive_cell_count_matches_sphere_volume(gold_dl):
    st = build_scene(GridSpec(cell=2.0), SceneConfig((mie.Sphere(100.0, gold_dl),)), WL)
    expected = math.pi / 6.0 * 50.0**3
    assert abs(st.dispersive_cells / expected - 1.0) < 0.03


def test_tabulated_material_needs_fit(gold):
    from nanoplasmon.errors import ConfigError

    with pytest.raises(ConfigError):
        build_scene(GridSpec(cell=8.0), SceneConfig((mie.Sphere(100.0, gold),)), WL)


def test_pulse_band_within_3db():
    p = PulseSpec(600.0, 300.0)
    assert np.all(p.relative_spectrum(np.linspace(450.0, 750.0, 31)) >= 10 ** (-3 / 20))
    with pytest.raises(ValueError):
        PulseSpec(600.0, 900.0)


# --- time stepping ----------------------------------------------------------

def test_vacuum_without_source_stays_zero():
    scene = SceneConfig(extent=40.0, pulse=PulseSpec(amplitude=0.0))
    st = build_scene(GridSpec(cell=8.0), scene, WL)
    for _ in range(300):
        step(st)
    for name in ("ex", "ey", "ez", "hx", "hy", "hz"):
        assert not np.any(getattr(st, name))


def test_tfsf_leakage_below_40db():
    st = build_scene(GridSpec(cell=8.0, dtype="float64"), SceneConfig(extent=80.0), WL)
    mask = _sf_mask(st)
    leak = inc = 0.0
    for _ in range(1500):
        step(st)
        inc = max(inc, np.abs(st.ex_inc).max())
        leak = max(leak, max(np.abs(getattr(st, c)[mask]).max() for c in ("ex", "ey", "ez")))
    assert inc > 0.1
    assert 20 * np.log10(leak / inc) <= -40.0


def test_cpml_reflection_below_60db():
    # same scatterer and probes, CPML 4 cells vs 40 cells beyond the monitors
    s = mie.Sphere(40.0, materials.Constant(4.0))

    def trace(gap):
        spec = GridSpec(cell=8.0, dtype="float64", pml_gap=gap, tfsf_margin=4, monitor_offset=2)
        st = build_scene(spec, SceneConfig((s,)), WL)
        lo, hi = st.monitors.box
        mid = (lo + hi) // 2
        probes = [(hi[0] + 3, mid[1], mid[2]), (lo[0] - 3, lo[1] - 3, hi[2] + 3)]
        rows = []
        for _ in range(700):
            step(st)
            rows.append([st.ez[p] for p in probes] + [st.ex[p] for p in probes])
        return np.array(rows)

    small, big = trace(4), trace(44)
    ratio = np.sum((small - big) ** 2, axis=0) / np.sum(big**2, axis=0)
    assert np.all(10 * np.log10(ratio) <= -60.0)


def test_periodic_vacuum_energy_conserved(rng):
    # discrete Yee invariant: eps E^n.E^n + H^{n-1/2}.H^{n+1/2}
    scene = SceneConfig((mie.Sphere(40.0, materials.Constant(3.0)),), extent=40.0)
    st = build_scene(GridSpec(cell=8.0, dtype="float64", pml=6, tfsf_margin=2), scene, WL,
                     boundary="periodic")
    for name in ("ex", "ey", "ez", "hx", "hy", "hz"):
        getattr(st, name)[...] = rng.standard_normal(st.shape)

    def invariant(e_old, h_old):
        w = sum(np.sum(eps * e * e) for eps, e in zip((st.epsx, st.epsy, st.epsz), e_old))
        return w + sum(np.sum(a * b) for a, b in zip(h_old, (st.hx, st.hy, st.hz)))

    values = []
    for _ in range(1000):
        e_old = [st.ex.copy(), st.ey.copy(), st.ez.copy()]
        h_old = [st.hx.copy(), st.hy.copy(), st.hz.copy()]
        step(st)
        values.append(invariant(e_old, h_old))
    values = np.array(values)
    assert np.max(np.abs(values / values[0] - 1.0)) < 1e-6


def _small_run(amplitude=1.0, dtype="float64", material=None, center=(0.0, 0.0, 0.0)):
    material = material or materials.Constant(4.0)
    scene = SceneConfig((mie.Sphere(60.0, material, center),),
                        pulse=PulseSpec(amplitude=amplitude))
    st = build_scene(GridSpec(cell=6.0, dtype=dtype, tfsf_margin=6), scene, WL)
    return st, run_scattering(st, decay=1e-6)


def test_source_linearity():
    _, one = _small_run(1.0)
    _, two = _small_run(2.0)
    np.testing.assert_allclose(two.values, one.values, rtol=1e-10)


def test_mirror_symmetry_in_y(gold_dl):
    st, _ = _small_run(material=gold_dl)
    (_, j0, _), (_, j1, _) = st.monitors.box
    dom = st.dom_lo
    # the scene origin is a grid node, so the y faces mirror each other
    assert (j0 + dom[1]) == -(j1 + dom[1])
    sgn_terms = list(zip(st.flux_terms, st.dft_e, st.dft_h))
    faces = []
    for (sgn, _, _, _, w), ae, ah in sgn_terms[8:12]:
        faces.append(sgn * 0.5 * np.einsum("wab,ab->w", (ae * np.conj(ah)).real, w))
    minus, plus = faces[0] + faces[1], faces[2] + faces[3]
    np.testing.assert_allclose(minus, plus, rtol=1e-6)
    # field level: Ez at mirrored nodes of the two y faces
    ez_minus, ez_plus = st.dft_e[8], st.dft_e[10]
    np.testing.assert_allclose(ez_minus, ez_plus, rtol=1e-6, atol=1e-6 * np.abs(ez_plus).max())


def test_empty_domain_cross_section_vanishes():
    st = build_scene(GridSpec(cell=8.0), SceneConfig(extent=100.0), WL)
    sigma = run_scattering(st, decay=1e-6)
    geometric = math.pi * 50.0**2
    assert sigma.meta["converged"]
    assert np.all(np.abs(sigma.values) < 1e-3 * geometric)
    assert abs(sigma.meta["min_raw_value"]) < 1e-3 * geometric


def test_dielectric_sphere_matches_mie():
    s = mie.Sphere(100.0, materials.Constant(2.25))
    spec = GridSpec(cell=5.0, fill="center")
    sigma = simulate(SceneConfig((s,)), spec, WL, decay=1e-6)
    ref = mie.mie_cross_sections(s, 1.0, WL)["scattering"].values
    np.testing.assert_allclose(sigma.values, ref, rtol=0.05)


def test_non_convergence_warns():
    s = mie.Sphere(60.0, materials.Constant(4.0))
    st = build_scene(GridSpec(cell=8.0), SceneConfig((s,)), WL)
    with pytest.warns(RuntimeWarning, match="did not decay"):
        sigma = run_scattering(st, max_steps=200)
    assert sigma.meta["converged"] is False
    assert "warning" in sigma.meta


def test_instability_is_reported():
    from nanoplasmon.errors import InstabilityError

    st = build_scene(GridSpec(cell=8.0, dtype="float64"), SceneConfig(extent=40.0), WL)
    st.cbx *= 4.0  # break the Courant limit on purpose
    st.cby *= 4.0
    st.cbz *= 4.0
    with pytest.raises(InstabilityError) as info:
        run_scattering(st, max_steps=5000)
    assert info.value.step > 0


def test_normalization_cache_keyed_on_grid_and_source():
    st1, _ = _small_run(1.0)
    st2, _ = _small_run(1.0, material=materials.Constant(2.0))
    assert core.normalization_key(st1) == core.normalization_key(st2)
    assert core.normalization_key(st1) in core._NORMALIZATION_CACHE
    st3 = build_scene(GridSpec(cell=5.0), SceneConfig(extent=40.0), WL)
    assert core.normalization_key(st3) != core.normalization_key(st1)


# --- ADE: 1D slab against the Fresnel result --------------------------------

def _slab_line(material, thickness, dx, pulse, n_steps, slab=True):
    """1D run with the solver's auxiliary-line and ADE kernels; returns the DFT at a probe."""
    s = 0.5
    dt = s * dx * 1e-9 / C0
    pad, n = 400, 6000
    ex, hy = np.zeros(n), np.zeros(n)
    pos = np.arange(n, dtype=float)
    d = np.clip(np.maximum(pad - pos, pos - (n - 1 - pad)) / pad, 0.0, 1.0)
    le = 0.35 * d**3
    lh1, lh2 = (1 - le) / (1 + le), 1.0 / (1 + le)
    eps_inf = np.ones(n)
    a0 = 1000
    cells = int(round(thickness / dx))
    idx = np.arange(a0, a0 + cells + 1)
    weight = np.ones(idx.size)
    weight[0] = weight[-1] = 0.5  # face nodes are half filled
    if slab:
        eps_inf[idx] += weight * (material.eps_inf - 1.0)
    le1, le2 = (1 - le) / (1 + le), (s / eps_inf) / (1 + le)
    a1, a2, a3 = core._pole_coefficients(material, dt)
    p_now = np.zeros((a1.size, idx.size))
    p_prev = np.zeros_like(p_now)
    dp = np.zeros(idx.size)
    inv = 1.0 / eps_inf[idx]
    probe = a0 + cells + 150
    omega = wavelength_to_omega(WL)
    acc = np.zeros(WL.size, complex)
    for step_n in range(n_steps):
        kn.aux_update_h(ex, hy, s, lh1, lh2)
        if slab:
            kn.ade_polarization(ex, idx, weight, p_now, p_prev, a1, a2, a3, dp)
        kn.aux_update_e(ex, hy, le1, le2)
        if slab:
            kn.ade_correct(ex, idx, inv, dp)
        ex[pad + 2] += s * pulse.waveform((step_n + 1) * dt)
        acc += np.exp(1j * omega * (step_n + 1) * dt) * ex[probe]
    return acc


def test_ade_slab_transmission_matches_fresnel(gold_dl):
    thickness, dx = 20.0, 0.5
    pulse = PulseSpec(600.0, 300.0)
    steps = 16000
    t_fdtd = _slab_line(gold_dl, thickness, dx, pulse, steps) / _slab_line(
        gold_dl, thickness, dx, pulse, steps, slab=False)
    n = np.sqrt(gold_dl.permittivity(WL).astype(complex))
    k0 = 2 * np.pi / WL
    delta = n * k0 * thickness
    r12, r23 = (1 - n) / (1 + n), (n - 1) / (n + 1)
    t = (2 / (1 + n)) * (2 * n / (n + 1)) * np.exp(1j * delta) / (1 + r12 * r23 * np.exp(2j * delta))
    np.testing.assert_allclose(np.abs(t_fdtd), np.abs(t), rtol=0.02)


# --- pair scans ---------------------------------------------------------------

def _pair_geometry():
    return PairScanGeometry(40.0, materials.Constant(4.0), 1.0, 1.0, 5.0, (1.0, 0.0, 0.0))


def test_pair_scan_matches_single_runs_at_decoupled_distance():
    geom = _pair_geometry()
    traj = ScanTrajectory([400.0, 425.0], [15.0, 15.0], 25.0)
    spec = GridSpec(cell=8.0, tfsf_margin=4)
    res = run_pair_scan(traj, geom, spec, wavelengths=WL, decay=1e-6)
    assert not res.failures
    assert [d for d, _ in res.spectra] == [400.0, 425.0]
    for (d, sp), (x, h) in zip(res.spectra, traj.samples):
        a, b = geom.spheres(x, h)
        ref = simulate(SceneConfig((a, b), 1.0, None, (0, 0, -1), (1, 0, 0)), spec, WL, decay=1e-6)
        np.testing.assert_array_equal(sp.values, ref.values)


def test_pair_scan_collects_failures_and_continues():
    geom = _pair_geometry()
    # the first placement overlaps (center distance < diameter)
    traj = ScanTrajectory([10.0, 300.0], [15.0, 15.0], 25.0)
    res = run_pair_scan(traj, geom, GridSpec(cell=8.0, tfsf_margin=4), wavelengths=WL, decay=1e-5)
    assert len(res.failures) == 1
    assert res.failures[0]["error"] == "GeometryError"
    assert len(res.spectra) == 1 and res.spectra[0][0] == 300.0
    assert res.manifest["completed"] == 1


# --- convergence against Mie (long) ------------------------------------------

@pytest.mark.slow
def test_gold_sphere_grid_convergence(gold_dl):
    s = mie.Sphere(100.0, gold_dl)
    wl = np.arange(500.0, 651.0, 10.0)
    ref = mie.mie_cross_sections(s, 1.0, wl)["scattering"].values
    errors = []
    for cell in (4.0, 3.0, 2.0):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            sigma = simulate(SceneConfig((s,)), GridSpec(cell=cell), wl)
        errors.append(abs(sigma.values.max() - ref.max()) / ref.max())
    assert errors[0] >= errors[1] >= errors[2]
