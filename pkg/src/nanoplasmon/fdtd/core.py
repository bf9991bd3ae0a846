"""3D FDTD for dispersive spheres: Yee grid, CPML, ADE, TFSF and flux monitors.

The solver frame always has the incident plane wave travelling along +z
and polarized along x. Other axis-aligned illuminations are handled by
permuting the scene into that frame (the cross section is frame
independent).
"""
from __future__ import annotations

import hashlib
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import __version__
from ..errors import ConfigError, GeometryError, InstabilityError, ResourceError
from ..materials import Constant, DrudeLorentz, wavelength_to_omega
from ..spectrum import Spectrum
from . import kernels as kn

C0 = 299792458.0
MAX_COURANT = 1.0 / math.sqrt(3.0)
FILL_RULES = ("average", "majority", "center")


@dataclass(frozen=True)
class GridSpec:
    """Cell size (nm), CPML thickness (cells), Courant factor and layout margins.

    ``fill`` selects how partially covered nodes are assigned (see
    :func:`_apply_fill_rule`).
    """

    cell: float = 2.0
    pml: int = 10
    courant: float = 0.5
    tfsf_margin: int = 20
    monitor_offset: int = 6
    pml_gap: int = 4
    dtype: str = "float32"
    fill: str = "majority"

    def __post_init__(self):
        if not self.cell > 0:
            raise ValueError("cell size must be positive")
        if not 0 < self.courant <= MAX_COURANT:
            raise ValueError(f"Courant factor must be in (0, 1/sqrt(3)], got {self.courant}")
        if self.pml < 6:
            raise ValueError("CPML needs at least 6 cells")
        if self.tfsf_margin < 1 or self.monitor_offset < 1 or self.pml_gap < 1:
            raise ValueError("layout margins must be at least one cell")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.fill not in FILL_RULES:
            raise ValueError(f"fill must be one of {FILL_RULES}")

    @property
    def dt(self):
        """Time step in seconds."""
        return self.courant * self.cell * 1e-9 / C0


@dataclass(frozen=True)
class PulseSpec:
    """Differentiated-Gaussian pulse covering ``center +- bandwidth/2`` (nm).

    The spectral maximum sits at the mean angular frequency of the band
    edges. The whole band must stay within 3 dB of that maximum.
    """

    center: float = 600.0
    bandwidth: float = 300.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not (self.center > 0 and self.bandwidth > 0):
            raise ValueError("pulse center and bandwidth must be positive")
        lo, hi = self.band
        if lo <= 0:
            raise ValueError("pulse band extends to non-positive wavelength")
        level = self.relative_spectrum(np.array([lo, hi]))
        if np.any(level < 10 ** (-3 / 20)):
            raise ValueError(
                f"a differentiated Gaussian cannot cover {lo:g}-{hi:g} nm within 3 dB"
            )

    @property
    def band(self):
        return self.center - self.bandwidth / 2, self.center + self.bandwidth / 2

    @property
    def omega_peak(self):
        lo, hi = self.band
        return 0.5 * (wavelength_to_omega(lo) + wavelength_to_omega(hi))

    @property
    def tau(self):
        return math.sqrt(2.0) / self.omega_peak

    @property
    def delay(self):
        return 5.0 * self.tau

    def relative_spectrum(self, wavelength):
        """Spectral magnitude relative to its maximum."""
        x = wavelength_to_omega(np.asarray(wavelength, dtype=float)) / self.omega_peak
        return x * np.exp(-(x * x - 1.0) / 2.0)

    def waveform(self, t):
        u = (t - self.delay) / self.tau
        return -self.amplitude * math.sqrt(2.0 * math.e) * u * math.exp(-u * u)


@dataclass(frozen=True)
class SceneConfig:
    """Spheres in a homogeneous background, illuminated by a plane wave.

    ``illumination`` gives axis-aligned propagation and polarization
    vectors; ``extent`` (nm) sizes the total-field box of an empty scene.
    """

    particles: tuple = ()
    eps_m: float = 1.0
    eps_substrate: float | None = None
    direction: tuple = (0.0, 0.0, 1.0)
    polarization: tuple = (1.0, 0.0, 0.0)
    pulse: PulseSpec = field(default_factory=PulseSpec)
    extent: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "particles", tuple(self.particles))
        if not self.eps_m > 0:
            raise ValueError("background permittivity must be positive")
        if self.eps_substrate is not None:
            raise ConfigError(
                "scene.eps_substrate",
                "explicit substrate half-spaces are not supported by the plane-wave "
                "source; use the effective background index",
            )
        _axis_frame(self.direction, self.polarization)
        ps = self.particles
        for a in range(len(ps)):
            for b in range(a + 1, len(ps)):
                d = np.linalg.norm(np.subtract(ps[a].center, ps[b].center))
                if d < ps[a].radius + ps[b].radius:
                    raise GeometryError(
                        f"particles {a} and {b} overlap (center distance {d:.3f} nm)"
                    )


def _axis_frame(direction, polarization):
    """Rotation (row-permutation with signs) taking the scene frame to the solver frame."""
    d = np.asarray(direction, dtype=float)
    p = np.asarray(polarization, dtype=float)
    for v, name in ((d, "direction"), (p, "polarization")):
        if np.count_nonzero(v) != 1 or abs(abs(v).max() - 1.0) > 1e-12:
            raise ConfigError(f"scene.{name}", "FDTD illumination must be along a grid axis")
    if abs(np.dot(d, p)) > 0:
        raise ConfigError("scene.polarization", "polarization must be perpendicular to direction")
    y = np.cross(d, p)
    return np.vstack([p, y, d])


@dataclass(frozen=True)
class MonitorSet:
    """Closed DFT flux box, given in node indices of the solver grid."""

    wavelengths: np.ndarray
    box: tuple
    decimation: int = 4

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float).ravel()
        if wl.size == 0 or np.any(wl <= 0):
            raise ValueError("monitor wavelengths must be positive")
        object.__setattr__(self, "wavelengths", wl)


@dataclass
class _DispersiveGroup:
    idx: np.ndarray
    weight: np.ndarray
    inv_eps: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    p_now: np.ndarray
    p_prev: np.ndarray
    dp: np.ndarray


class SimulationState:
    """Mutable FDTD state produced by :func:`build_scene`."""

    def __init__(self):
        self.n = 0
        self.meta = {}


def _pole_coefficients(material, dt):
    """ADE update coefficients (a1, a2, a3) for every pole of ``material``."""
    a1, a2, a3 = [], [], []
    terms = [(0.0, material.drude_damping, material.plasma_frequency**2)]
    terms += [(p.resonance_frequency, p.damping, p.strength * p.resonance_frequency**2)
              for p in material.poles]
    for w0, g, src in terms:
        den = 1.0 + 0.5 * g * dt
        a1.append((2.0 - (w0 * dt) ** 2) / den)
        a2.append((0.5 * g * dt - 1.0) / den)
        a3.append(src * dt * dt / den)
    return np.array(a1), np.array(a2), np.array(a3)


def _cpml_profile(n, pml, courant, eps_r, half, m=3, sigma_scale=0.8, kappa_max=5.0,
                  alpha_frac=0.05):
    """Per-index CPML arrays along one axis (integer or half-integer nodes).

    Returns inverse kappa, b, c and the slab-slot map.
    """
    pos = np.arange(n, dtype=float) + (0.5 if half else 0.0)
    lo_edge, hi_edge = float(pml), float(n - 1 - pml)
    depth = np.zeros(n)
    depth = np.where(pos < lo_edge, (lo_edge - pos) / pml, depth)
    depth = np.where(pos > hi_edge, (pos - hi_edge) / pml, depth)
    depth = np.clip(depth, 0.0, 1.0)
    # sigma, alpha in units of eps0 / dt; (m+1)/(150 pi dx sqrt(eps_r)) is the usual optimum
    sigma_opt = (m + 1) * 120.0 * courant / (150.0 * math.sqrt(eps_r))
    sigma_max = sigma_scale * sigma_opt
    sigma = sigma_max * depth**m
    kappa = 1.0 + (kappa_max - 1.0) * depth**m
    alpha = alpha_frac * courant * (1.0 - depth)
    b = np.exp(-(sigma / kappa + alpha))
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(sigma > 0, sigma * (b - 1.0) / (sigma * kappa + kappa**2 * alpha), 0.0)
    inside = depth > 0
    slot = np.full(n, -1, dtype=np.int64)
    lo_idx = np.nonzero(inside & (pos < lo_edge))[0]
    hi_idx = np.nonzero(inside & (pos > hi_edge))[0]
    slot[lo_idx] = np.arange(lo_idx.size)
    slot[hi_idx] = lo_idx.size + np.arange(hi_idx.size)
    return 1.0 / kappa, b, c, slot, lo_idx.size + hi_idx.size


def fill_fractions(centers, radius, node_offset, spacing, lo_idx, shape):
    """Corner-sampled fill fraction of a sphere on one staggered component.

    The eight corners of a cell-sized cube around each node are tested for
    inclusion and averaged. Only nodes within the sphere's bounding box are
    visited. Returns (flat indices, fractions) of nodes with a nonzero
    fraction.
    """
    c = np.asarray(centers, dtype=float)
    lo = np.floor((c - radius) / spacing - node_offset - lo_idx - 1).astype(int)
    hi = np.ceil((c + radius) / spacing - node_offset - lo_idx + 1).astype(int)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.asarray(shape) - 1)
    axes = [np.arange(lo[a], hi[a] + 1) for a in range(3)]
    coords = [(axes[a] + lo_idx[a] + node_offset[a]) * spacing - c[a] for a in range(3)]
    gx, gy, gz = np.meshgrid(*coords, indexing="ij")
    count = np.zeros(gx.shape)
    h = 0.5 * spacing
    r2 = radius * radius
    for sx in (-h, h):
        for sy in (-h, h):
            for sz in (-h, h):
                count += ((gx + sx) ** 2 + (gy + sy) ** 2 + (gz + sz) ** 2 <= r2)
    frac = count / 8.0
    ii, jj, kk = np.nonzero(frac)
    flat = np.ravel_multi_index((ii + lo[0], jj + lo[1], kk + lo[2]), shape)
    return flat, frac[ii, jj, kk]


_COMPONENT_OFFSETS = {
    "x": (0.5, 0.0, 0.0),
    "y": (0.0, 0.5, 0.0),
    "z": (0.0, 0.0, 0.5),
}


def _apply_fill_rule(rule, flat, frac, comp, center, radius, cell, dom_lo, shape):
    """Turn corner fill fractions into material weights.

    ``average`` keeps the corner-averaged fraction (arithmetic mean of eps
    over the eight corners); ``majority`` makes a node fully material when
    more than half of its corners are inside; ``center`` when the node
    itself is inside.
    """
    if rule == "average":
        return flat, frac
    if rule == "majority":
        keep = frac > 0.5
    elif rule == "center":
        pos = (np.array(np.unravel_index(flat, shape)).T + dom_lo + _COMPONENT_OFFSETS[comp]) * cell
        keep = np.sum((pos - center) ** 2, axis=1) <= radius**2
    else:
        raise ConfigError("grid.fill", f"unknown fill rule {rule!r}; choose from {FILL_RULES}")
    return flat[keep], np.ones(int(keep.sum()))


def estimate_memory(shape, itemsize, pml_cells, n_wavelengths, face_nodes, n_dispersive):
    n = int(np.prod(shape))
    fields = 9 * n * itemsize  # E, H, update coefficients
    psi = 4 * pml_cells * itemsize
    dft = 2 * face_nodes * n_wavelengths * 16
    ade = n_dispersive * (8 * 3 * 2 + 40)
    return fields + psi + dft + ade


def _layout(spec, scene, rot):
    """Node-index layout (domain shape, TF box, monitor box, origin index)."""
    if scene.particles:
        cs = np.array([rot @ np.asarray(p.center) for p in scene.particles])
        rs = np.array([p.radius for p in scene.particles])
        lo = (cs - rs[:, None]).min(axis=0)
        hi = (cs + rs[:, None]).max(axis=0)
    else:
        lo = np.full(3, -scene.extent)
        hi = np.full(3, scene.extent)
    a = spec.cell
    tf_lo = np.floor(lo / a).astype(int) - spec.tfsf_margin
    tf_hi = np.ceil(hi / a).astype(int) + spec.tfsf_margin
    mon_lo = tf_lo - spec.monitor_offset
    mon_hi = tf_hi + spec.monitor_offset
    dom_lo = mon_lo - spec.pml_gap - spec.pml
    dom_hi = mon_hi + spec.pml_gap + spec.pml
    origin = -dom_lo
    shape = tuple(int(v) for v in (dom_hi - dom_lo + 1))
    return shape, tf_lo + origin, tf_hi + origin, mon_lo + origin, mon_hi + origin, dom_lo


def build_scene(spec: GridSpec, scene: SceneConfig, wavelengths=None, memory_budget=4 * 2**30,
                decimation=4, boundary="cpml"):
    """Discretize a scene.

    Material assignment uses corner-averaged fill fractions on every
    staggered E component; ADE state exists only on nodes that touch a
    dispersive particle.

    Raises
    ------
    ResourceError
        Estimated memory above ``memory_budget`` bytes.
    GeometryError
        Overlapping particles (raised by :class:`SceneConfig`).
    """
    wl = np.arange(450.0, 750.1, 5.0) if wavelengths is None else np.asarray(wavelengths, float)
    rot = _axis_frame(scene.direction, scene.polarization)
    shape, tf_lo, tf_hi, mon_lo, mon_hi, dom_lo = _layout(spec, scene, rot)
    dtype = np.dtype(spec.dtype)

    pml_cells = sum(2 * (spec.pml + 1) * int(np.prod(shape)) // shape[a] for a in range(3))
    ext = mon_hi - mon_lo + 1
    face_nodes = 4 * (ext[0] * ext[1] + ext[1] * ext[2] + ext[0] * ext[2])
    approx_disp = sum(4.0 / 3.0 * np.pi * (p.radius / spec.cell + 1.5) ** 3 for p in scene.particles)
    est = estimate_memory(shape, dtype.itemsize, pml_cells, wl.size, face_nodes, 3 * approx_disp)
    if est > memory_budget:
        raise ResourceError(est, memory_budget)

    st = SimulationState()
    st.spec, st.scene, st.rot = spec, scene, rot
    st.shape, st.dtype = shape, dtype
    st.tf = (tf_lo, tf_hi)
    st.dom_lo = dom_lo
    st.boundary = boundary
    st.dt = spec.dt
    st.s = spec.courant
    st.memory_estimate = est
    for name in ("ex", "ey", "ez", "hx", "hy", "hz"):
        setattr(st, name, np.zeros(shape, dtype))

    eps_inf_eff = {c: np.full(shape, scene.eps_m, dtype=np.float64) for c in "xyz"}
    groups = []
    disp_cells = 0
    for pi, p in enumerate(scene.particles):
        center = rot @ np.asarray(p.center)
        mat = p.material
        if isinstance(mat, Constant):
            eps_p, poles = float(mat.eps), None
        elif isinstance(mat, DrudeLorentz):
            eps_p, poles = mat.eps_inf, _pole_coefficients(mat, st.dt)
        else:
            raise ConfigError(
                f"scene.particles[{pi}].material",
                "FDTD needs a Drude-Lorentz or constant material (fit tabulated data first)",
            )
        if poles is not None:
            # dispersive cells: cube centers inside the sphere
            cell_flat, _ = fill_fractions(center, p.radius, (0.5, 0.5, 0.5), spec.cell, dom_lo, shape)
            cc = (np.array(np.unravel_index(cell_flat, shape)).T + dom_lo + 0.5) * spec.cell
            disp_cells += int(np.sum(np.sum((cc - center) ** 2, axis=1) <= p.radius**2))
        for comp in "xyz":
            flat, frac = fill_fractions(center, p.radius, _COMPONENT_OFFSETS[comp], spec.cell, dom_lo, shape)
            flat, frac = _apply_fill_rule(spec.fill, flat, frac, comp, center, p.radius, spec.cell,
                                          dom_lo, shape)
            e = eps_inf_eff[comp].reshape(-1)
            e[flat] += frac * (eps_p - scene.eps_m)
            if poles is not None:
                groups.append((comp, flat, frac, poles))
    st.dispersive_cells = disp_cells
    st.eps_inf = eps_inf_eff
    for comp in "xyz":
        setattr(st, f"cb{comp}", (st.s / eps_inf_eff[comp]).astype(dtype))
        setattr(st, f"eps{comp}", eps_inf_eff[comp].astype(dtype))
    st.groups = []
    for comp, flat, frac, (a1, a2, a3) in groups:
        inv = 1.0 / eps_inf_eff[comp].reshape(-1)[flat]
        npole, n = a1.size, flat.size
        st.groups.append((comp, _DispersiveGroup(
            flat.astype(np.int64), frac, inv, a1, a2, a3,
            np.zeros((npole, n)), np.zeros((npole, n)), np.zeros(n),
        )))
    st.ade_nodes = sum(g.idx.size for _, g in st.groups)

    # CPML: per axis the slab indices, 1/kappa, b, c and two convolution arrays
    def slabs(half):
        out = []
        for a in range(3):
            ik, bb, cc, slot, count = _cpml_profile(shape[a], spec.pml, st.s, scene.eps_m, half)
            sl = np.empty(count, dtype=np.int64)
            sl[slot[slot >= 0]] = np.nonzero(slot >= 0)[0]
            ps = list(shape)
            ps[a] = count
            out.append((sl, ik.astype(dtype), bb.astype(dtype), cc.astype(dtype),
                        np.zeros(ps, dtype), np.zeros(ps, dtype)))
        return out

    st.cpml_h, st.cpml_e = slabs(True), slabs(False)

    # 1D incident-field grid along z with absorbing ends, anchored on the TF
    # box so the pulse timing does not depend on the domain size
    pad = 80
    n_aux = int(tf_hi[2] - tf_lo[2]) + 2 * pad + 30
    st.aux_off = pad + 12 - int(tf_lo[2])
    st.aux_src = pad + 2
    st.ex_inc = np.zeros(n_aux)
    st.hy_inc = np.zeros(n_aux)
    pos_e = np.arange(n_aux, dtype=float)
    pos_h = pos_e + 0.5

    def loss(pos):
        d = np.clip(np.maximum(pad - pos, pos - (n_aux - 1 - pad)) / pad, 0.0, 1.0)
        return 0.35 * d**3

    le, lh = loss(pos_e), loss(pos_h)
    st.aux_le1 = (1 - le) / (1 + le)
    st.aux_le2 = (st.s / scene.eps_m) / (1 + le)
    st.aux_lh1 = (1 - lh) / (1 + lh)
    st.aux_lh2 = 1.0 / (1 + lh)
    st.cb_bg = st.s / scene.eps_m

    st.monitors = MonitorSet(wl, (mon_lo, mon_hi), decimation)
    _init_dft(st)
    st.n = 0
    st.source_peak = abs(scene.pulse.amplitude)
    st.meta = {
        "shape": list(shape),
        "cell_nm": spec.cell,
        "dt_s": st.dt,
        "tfsf_box": [tf_lo.tolist(), tf_hi.tolist()],
        "monitor_box": [mon_lo.tolist(), mon_hi.tolist()],
        "dispersive_cells": disp_cells,
        "ade_nodes": st.ade_nodes,
        "memory_estimate_bytes": int(est),
    }
    return st


def _init_dft(st):
    wl = st.monitors.wavelengths
    st.omega = wavelength_to_omega(wl)
    (i0, j0, k0), (i1, j1, k1) = st.monitors.box
    f = {n: getattr(st, n) for n in ("ex", "ey", "ez", "hx", "hy", "hz")}
    terms = []

    def trap(n):
        w = np.ones(n)
        w[0] = w[-1] = 0.5
        return w

    # (sign, E view, H view pair, weights) per tangential product on each face
    for kk, sgn in ((k0, -1.0), (k1, 1.0)):
        terms.append((sgn, f["ex"][i0:i1, j0:j1 + 1, kk], f["hy"][i0:i1, j0:j1 + 1, kk - 1],
                      f["hy"][i0:i1, j0:j1 + 1, kk], np.outer(np.ones(i1 - i0), trap(j1 - j0 + 1))))
        terms.append((-sgn, f["ey"][i0:i1 + 1, j0:j1, kk], f["hx"][i0:i1 + 1, j0:j1, kk - 1],
                      f["hx"][i0:i1 + 1, j0:j1, kk], np.outer(trap(i1 - i0 + 1), np.ones(j1 - j0))))
    for ii, sgn in ((i0, -1.0), (i1, 1.0)):
        terms.append((sgn, f["ey"][ii, j0:j1, k0:k1 + 1], f["hz"][ii - 1, j0:j1, k0:k1 + 1],
                      f["hz"][ii, j0:j1, k0:k1 + 1], np.outer(np.ones(j1 - j0), trap(k1 - k0 + 1))))
        terms.append((-sgn, f["ez"][ii, j0:j1 + 1, k0:k1], f["hy"][ii - 1, j0:j1 + 1, k0:k1],
                      f["hy"][ii, j0:j1 + 1, k0:k1], np.outer(trap(j1 - j0 + 1), np.ones(k1 - k0))))
    for jj, sgn in ((j0, -1.0), (j1, 1.0)):
        terms.append((sgn, f["ez"][i0:i1 + 1, jj, k0:k1], f["hx"][i0:i1 + 1, jj - 1, k0:k1],
                      f["hx"][i0:i1 + 1, jj, k0:k1], np.outer(trap(i1 - i0 + 1), np.ones(k1 - k0))))
        terms.append((-sgn, f["ex"][i0:i1, jj, k0:k1 + 1], f["hz"][i0:i1, jj - 1, k0:k1 + 1],
                      f["hz"][i0:i1, jj, k0:k1 + 1], np.outer(np.ones(i1 - i0), trap(k1 - k0 + 1))))
    st.flux_terms = terms
    nw = wl.size
    st.dft_e = [np.zeros((nw,) + t[1].shape, complex) for t in terms]
    st.dft_h = [np.zeros((nw,) + t[1].shape, complex) for t in terms]
    # incident reference at the center of the total-field box
    st.inc_k = int((st.tf[0][2] + st.tf[1][2]) // 2)
    st.dft_inc_e = np.zeros(nw, complex)
    st.dft_inc_h = np.zeros(nw, complex)


def _update_h(st):
    ex, ey, ez, hx, hy, hz = st.ex, st.ey, st.ez, st.hx, st.hy, st.hz
    sv = st.dtype.type(st.s)
    kn.update_h(ex, ey, ez, hx, hy, hz, sv)
    (px, py, pz) = st.cpml_h
    kn.cpml_h_x(ey, ez, hy, hz, sv, *px)
    kn.cpml_h_y(ex, ez, hx, hz, sv, *py)
    kn.cpml_h_z(ex, ey, hx, hy, sv, *pz)


def _update_e(st):
    ex, ey, ez, hx, hy, hz = st.ex, st.ey, st.ez, st.hx, st.hy, st.hz
    kn.update_e(ex, ey, ez, hx, hy, hz, st.cbx, st.cby, st.cbz)
    (px, py, pz) = st.cpml_e
    kn.cpml_e_x(hy, hz, ey, ez, st.cby, st.cbz, *px)
    kn.cpml_e_y(hx, hz, ex, ez, st.cbx, st.cbz, *py)
    kn.cpml_e_z(hx, hy, ex, ey, st.cbx, st.cby, *pz)
    # the first half-staggered node never updates; freeze the last one too
    # so the PEC backing of the CPML sits symmetrically on both sides
    ex[-2] = 0.0
    ey[:, -2] = 0.0
    ez[:, :, -2] = 0.0


def _accumulate(st):
    """Add the current fields to the running DFTs (E at n dt, H at (n - 1/2) dt)."""
    t = st.n * st.dt
    pe = np.exp(1j * st.omega * t)
    ph = np.exp(1j * st.omega * (t - 0.5 * st.dt))
    for (_, e, h1, h2, _), acc_e, acc_h in zip(st.flux_terms, st.dft_e, st.dft_h):
        kn.dft_single(e, acc_e, pe)
        kn.dft_pair(h1, h2, acc_h, ph)
    k = st.inc_k + st.aux_off
    st.dft_inc_e += pe * st.ex_inc[k]
    st.dft_inc_h += ph * 0.5 * (st.hy_inc[k - 1] + st.hy_inc[k])


def step(st):
    """Advance the state by one time step.

    Order: H (with CPML), TF/SF correction of H, incident-line H, ADE
    polarization from the old E, E (with CPML), ADE correction, TF/SF
    correction of E, incident-line E plus source, DFT accumulation.
    """
    n = st.n
    if st.boundary == "periodic":
        kn.update_h_periodic(st.ex, st.ey, st.ez, st.hx, st.hy, st.hz, st.dtype.type(st.s))
        kn.update_e_periodic(st.ex, st.ey, st.ez, st.hx, st.hy, st.hz, st.cbx, st.cby, st.cbz)
        st.n = n + 1
        return st
    (i0, j0, k0), (i1, j1, k1) = st.tf
    _update_h(st)
    kn.tfsf_h(st.hy, st.hz, st.ex_inc, st.s, i0, i1, j0, j1, k0, k1, st.aux_off)
    kn.aux_update_h(st.ex_inc, st.hy_inc, st.s, st.aux_lh1, st.aux_lh2)
    for comp, g in st.groups:
        kn.ade_polarization(getattr(st, "e" + comp).reshape(-1), g.idx, g.weight, g.p_now,
                            g.p_prev, g.a1, g.a2, g.a3, g.dp)
    _update_e(st)
    for comp, g in st.groups:
        kn.ade_correct(getattr(st, "e" + comp).reshape(-1), g.idx, g.inv_eps, g.dp)
    kn.tfsf_e(st.ex, st.ez, st.hy_inc, st.cb_bg, i0, i1, j0, j1, k0, k1, st.aux_off)
    kn.aux_update_e(st.ex_inc, st.hy_inc, st.aux_le1, st.aux_le2)
    st.ex_inc[st.aux_src] += st.cb_bg * st.scene.pulse.waveform((n + 1) * st.dt)
    st.n = n + 1
    if st.n % st.monitors.decimation == 0:
        _accumulate(st)
    return st


def field_energy(st):
    """Sum of eps E.E + H.H over the grid (normalized units, polarization excluded)."""
    return float(kn.field_energy(st.ex, st.ey, st.ez, st.hx, st.hy, st.hz,
                                 st.epsx, st.epsy, st.epsz))


def _check_stable(st):
    limit = 1e12 * max(st.source_peak, 1e-300)
    for name in ("ex", "ey", "ez"):
        if not kn.max_abs(getattr(st, name)) <= limit:
            raise InstabilityError(st.n)


def flux_spectra(st):
    """Scattered power through the monitor box and incident intensity, per wavelength.

    Both are in the normalized units of the grid; their ratio times the
    cell area is the cross section in nm**2.
    """
    power = np.zeros(st.omega.size)
    for (sgn, _, _, _, w), acc_e, acc_h in zip(st.flux_terms, st.dft_e, st.dft_h):
        power += sgn * 0.5 * np.einsum("wab,ab->w", (acc_e * np.conj(acc_h)).real, w)
    intensity = 0.5 * (st.dft_inc_e * np.conj(st.dft_inc_h)).real
    return power, intensity


def normalization_key(st):
    """Hash of everything the incident spectrum depends on."""
    spec, sc = st.spec, st.scene
    payload = {
        "cell": spec.cell, "courant": spec.courant, "dtype": spec.dtype,
        "eps_m": sc.eps_m, "pulse": asdict(sc.pulse),
        "wavelengths": st.monitors.wavelengths.tolist(),
        "decimation": st.monitors.decimation,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


_NORMALIZATION_CACHE = {}


def run_scattering(st, monitors=None, max_steps=60000, decay=1e-8, check_every=100,
                   progress=None):
    """Time-step ``st`` until the field energy decays, then return the scattering spectrum.

    The scattered power is the DFT Poynting flux through the closed monitor
    box (which lies in the scattered-field region). The incident intensity
    comes from the 1D incident-field line of the same run, which is exactly
    the field an empty domain would carry. It is stored in a cache keyed on
    :func:`normalization_key` so later runs with the same grid and source
    reuse it.

    Returns
    -------
    Spectrum
        Scattering cross section in nm**2. ``meta["converged"]`` is False
        (and a warning is issued) when the decay criterion was not met
        within ``max_steps``.

    Raises
    ------
    InstabilityError
        Any field component exceeded 1e12 times the source amplitude.
    """
    if monitors is not None and monitors is not st.monitors:
        raise ValueError("monitors must be fixed when the scene is built (use build_scene)")
    t_start = time.perf_counter()
    t_source = 2.0 * st.scene.pulse.delay
    peak = 0.0
    converged = False
    with kn.flush_denormals():
        while st.n < max_steps:
            step(st)
            if st.n % check_every:
                continue
            _check_stable(st)
            energy = field_energy(st)
            peak = max(peak, energy)
            if progress is not None:
                progress(st.n, energy / peak if peak else 0.0)
            if st.n * st.dt > t_source and energy <= decay * peak:
                converged = True  # includes the unexcited case (peak == 0)
                break
    power, intensity = flux_spectra(st)
    key = normalization_key(st)
    cached = _NORMALIZATION_CACHE.get(key)
    if cached is None or cached[1] < st.n:
        _NORMALIZATION_CACHE[key] = (intensity.copy(), st.n)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma = power / intensity * st.spec.cell**2
    wl = st.monitors.wavelengths
    order = np.argsort(wl)
    raw = sigma[order]
    meta = {
        "model": "fdtd",
        "eps_m": st.scene.eps_m,
        "steps": st.n,
        "converged": converged,
        "normalization_key": key,
        "min_raw_value": float(np.min(raw)) if raw.size else 0.0,
        **{k: v for k, v in st.meta.items() if k in ("cell_nm", "shape", "dispersive_cells")},
    }
    st.meta["runtime_s"] = round(time.perf_counter() - t_start, 3)
    if not converged:
        msg = f"field energy did not decay below {decay:g} of its peak within {max_steps} steps"
        meta["warning"] = msg
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return Spectrum(wl[order], np.maximum(raw, 0.0), "scattering", meta)


def simulate(scene: SceneConfig, spec: GridSpec = GridSpec(), wavelengths=None, **kw):
    """Build and run one scene; keyword arguments go to :func:`run_scattering`."""
    budget = kw.pop("memory_budget", 4 * 2**30)
    st = build_scene(spec, scene, wavelengths, memory_budget=budget)
    return run_scattering(st, **kw)


@dataclass
class PairScanResult:
    """Per-sample spectra of a trajectory scan plus the failures that were skipped."""

    spectra: list
    failures: list
    manifest: dict


def run_pair_scan(traj, geometry, spec: GridSpec = GridSpec(), direction=(0.0, 0.0, -1.0),
                  polarization=None, pulse=None, wavelengths=None, progress=None, **kw):
    """Run one FDTD simulation per trajectory sample.

    The background index follows ``geometry.eps_for`` (contact or lifted).
    Errors at one sample are recorded and the scan continues.

    Returns
    -------
    PairScanResult
        ``spectra`` holds (lateral offset nm, Spectrum) for the samples
        that ran.
    """
    pol = tuple(geometry.scan_axis) if polarization is None else tuple(polarization)
    pulse = pulse or PulseSpec()
    out, failures = [], []
    for i, (x, h) in enumerate(zip(traj.lateral, traj.heights)):
        raw_h = h - traj.vertical_offset
        try:
            s1, s2 = geometry.spheres(x, h)
            scene = SceneConfig((s1, s2), geometry.eps_for(raw_h), None, direction, pol, pulse)
            spectrum = simulate(scene, spec, wavelengths, **kw)
        except (GeometryError, InstabilityError, ResourceError, ConfigError) as exc:
            failures.append({"sample": i, "lateral_nm": float(x), "error": type(exc).__name__,
                             "message": str(exc)})
            continue
        spectrum.meta.update({"sample": i, "lateral_nm": float(x), "height_nm": float(h)})
        out.append((float(x), spectrum))
        if progress is not None:
            progress(i, len(traj))
    manifest = {
        "samples": len(traj),
        "completed": len(out),
        "failures": failures,
        "grid": asdict(spec),
        "version": __version__,
    }
    return PairScanResult(out, failures, manifest)
