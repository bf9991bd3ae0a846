"""Numba kernels for the Yee update, CPML, ADE and DFT monitors.

Fields are stored in normalized units (``H~ = eta0 H``) on arrays of equal
shape; entries outside a component's valid range stay zero. ``S`` is the
Courant number ``c dt / dx``. CPML auxiliary arrays exist only inside the
absorbing slabs and are applied as separate corrections so the interior
loops stay branch-free.
"""
import platform

import numba as nb
import numpy as np
from llvmlite import ir
from numba import prange, types
from numba.core import cgutils
from numba.extending import intrinsic

X86 = platform.machine().lower() in ("x86_64", "amd64", "i686", "x86")
_FTZ_DAZ = 0x8040


def _mxcsr_call(builder, name, ptr):
    fnty = ir.FunctionType(ir.VoidType(), [ir.IntType(8).as_pointer()])
    fn = cgutils.get_or_insert_function(builder.module, fnty, name)
    builder.call(fn, [builder.bitcast(ptr, ir.IntType(8).as_pointer())])


@intrinsic
def _read_mxcsr(typingctx):
    def codegen(context, builder, sig, args):
        ptr = cgutils.alloca_once(builder, ir.IntType(32))
        _mxcsr_call(builder, "llvm.x86.sse.stmxcsr", ptr)
        return builder.zext(builder.load(ptr), ir.IntType(64))
    return types.int64(), codegen


@intrinsic
def _write_mxcsr(typingctx, value):
    def codegen(context, builder, sig, args):
        ptr = cgutils.alloca_once(builder, ir.IntType(32))
        builder.store(builder.trunc(args[0], ir.IntType(32)), ptr)
        _mxcsr_call(builder, "llvm.x86.sse.ldmxcsr", ptr)
        return context.get_dummy_value()
    return types.void(value), codegen


@nb.njit
def _set_mxcsr(value):
    old = _read_mxcsr()
    _write_mxcsr(value)
    return old


@nb.njit
def _or_mxcsr(mask):
    old = _read_mxcsr()
    _write_mxcsr(old | mask)
    return old


@nb.njit(parallel=True)
def _or_mxcsr_workers(mask, n):
    for _ in prange(n):
        _write_mxcsr(_read_mxcsr() | mask)


class flush_denormals:
    """Context manager enabling flush-to-zero / denormals-are-zero on x86.

    Decaying float32 fields otherwise pass through the subnormal range,
    which is orders of magnitude slower on most CPUs. Worker threads keep
    the mode; the calling thread's control word is restored on exit.
    """

    def __enter__(self):
        self._old = None
        if X86:
            self._old = _or_mxcsr(_FTZ_DAZ)
            _or_mxcsr_workers(_FTZ_DAZ, 4 * nb.get_num_threads())
        return self

    def __exit__(self, *exc):
        if self._old is not None:
            _set_mxcsr(self._old)
        return False


@nb.njit(parallel=True, cache=True)
def update_h(ex, ey, ez, hx, hy, hz, s):
    """Interior Yee update of H (no stretching; see ``cpml_h_*``)."""
    nx, ny, nz = ex.shape
    for i in prange(nx - 1):
        for j in range(ny - 1):
            for k in range(nz - 1):
                hx[i, j, k] -= s * ((ez[i, j + 1, k] - ez[i, j, k]) - (ey[i, j, k + 1] - ey[i, j, k]))
                hy[i, j, k] -= s * ((ex[i, j, k + 1] - ex[i, j, k]) - (ez[i + 1, j, k] - ez[i, j, k]))
                hz[i, j, k] -= s * ((ey[i + 1, j, k] - ey[i, j, k]) - (ex[i, j + 1, k] - ex[i, j, k]))


@nb.njit(parallel=True, cache=True)
def update_e(ex, ey, ez, hx, hy, hz, cbx, cby, cbz):
    nx, ny, nz = ex.shape
    for i in prange(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                ex[i, j, k] += cbx[i, j, k] * ((hz[i, j, k] - hz[i, j - 1, k]) - (hy[i, j, k] - hy[i, j, k - 1]))
                ey[i, j, k] += cby[i, j, k] * ((hx[i, j, k] - hx[i, j, k - 1]) - (hz[i, j, k] - hz[i - 1, j, k]))
                ez[i, j, k] += cbz[i, j, k] * ((hy[i, j, k] - hy[i - 1, j, k]) - (hx[i, j, k] - hx[i, j - 1, k]))


# CPML corrections. Each runs after the interior update over the slab
# indices ``sl`` along one axis and adds the (1/kappa - 1) stretching plus
# the convolution term for derivatives along that axis. Slab slot q holds
# grid index sl[q].

@nb.njit(parallel=True, cache=True)
def cpml_h_x(ey, ez, hy, hz, s, sl, ik, b, c, psi_y, psi_z):
    nx, ny, nz = ey.shape
    for q in prange(sl.shape[0]):
        i = sl[q]
        if i >= nx - 1:
            continue
        for j in range(ny - 1):
            for k in range(nz - 1):
                d_ez = ez[i + 1, j, k] - ez[i, j, k]
                d_ey = ey[i + 1, j, k] - ey[i, j, k]
                psi_y[q, j, k] = b[i] * psi_y[q, j, k] + c[i] * d_ez
                psi_z[q, j, k] = b[i] * psi_z[q, j, k] + c[i] * d_ey
                hy[i, j, k] += s * ((ik[i] - 1.0) * d_ez + psi_y[q, j, k])
                hz[i, j, k] -= s * ((ik[i] - 1.0) * d_ey + psi_z[q, j, k])


@nb.njit(parallel=True, cache=True)
def cpml_h_y(ex, ez, hx, hz, s, sl, ik, b, c, psi_x, psi_z):
    nx, ny, nz = ex.shape
    for i in prange(nx - 1):
        for q in range(sl.shape[0]):
            j = sl[q]
            if j >= ny - 1:
                continue
            for k in range(nz - 1):
                d_ez = ez[i, j + 1, k] - ez[i, j, k]
                d_ex = ex[i, j + 1, k] - ex[i, j, k]
                psi_x[i, q, k] = b[j] * psi_x[i, q, k] + c[j] * d_ez
                psi_z[i, q, k] = b[j] * psi_z[i, q, k] + c[j] * d_ex
                hx[i, j, k] -= s * ((ik[j] - 1.0) * d_ez + psi_x[i, q, k])
                hz[i, j, k] += s * ((ik[j] - 1.0) * d_ex + psi_z[i, q, k])


@nb.njit(parallel=True, cache=True)
def cpml_h_z(ex, ey, hx, hy, s, sl, ik, b, c, psi_x, psi_y):
    nx, ny, nz = ex.shape
    for i in prange(nx - 1):
        for j in range(ny - 1):
            for q in range(sl.shape[0]):
                k = sl[q]
                if k >= nz - 1:
                    continue
                d_ey = ey[i, j, k + 1] - ey[i, j, k]
                d_ex = ex[i, j, k + 1] - ex[i, j, k]
                psi_x[i, j, q] = b[k] * psi_x[i, j, q] + c[k] * d_ey
                psi_y[i, j, q] = b[k] * psi_y[i, j, q] + c[k] * d_ex
                hx[i, j, k] += s * ((ik[k] - 1.0) * d_ey + psi_x[i, j, q])
                hy[i, j, k] -= s * ((ik[k] - 1.0) * d_ex + psi_y[i, j, q])


@nb.njit(parallel=True, cache=True)
def cpml_e_x(hy, hz, ey, ez, cby, cbz, sl, ik, b, c, psi_y, psi_z):
    nx, ny, nz = hy.shape
    for q in prange(sl.shape[0]):
        i = sl[q]
        if i < 1 or i >= nx - 1:
            continue
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                d_hz = hz[i, j, k] - hz[i - 1, j, k]
                d_hy = hy[i, j, k] - hy[i - 1, j, k]
                psi_y[q, j, k] = b[i] * psi_y[q, j, k] + c[i] * d_hz
                psi_z[q, j, k] = b[i] * psi_z[q, j, k] + c[i] * d_hy
                ey[i, j, k] -= cby[i, j, k] * ((ik[i] - 1.0) * d_hz + psi_y[q, j, k])
                ez[i, j, k] += cbz[i, j, k] * ((ik[i] - 1.0) * d_hy + psi_z[q, j, k])


@nb.njit(parallel=True, cache=True)
def cpml_e_y(hx, hz, ex, ez, cbx, cbz, sl, ik, b, c, psi_x, psi_z):
    nx, ny, nz = hx.shape
    for i in prange(1, nx - 1):
        for q in range(sl.shape[0]):
            j = sl[q]
            if j < 1 or j >= ny - 1:
                continue
            for k in range(1, nz - 1):
                d_hz = hz[i, j, k] - hz[i, j - 1, k]
                d_hx = hx[i, j, k] - hx[i, j - 1, k]
                psi_x[i, q, k] = b[j] * psi_x[i, q, k] + c[j] * d_hz
                psi_z[i, q, k] = b[j] * psi_z[i, q, k] + c[j] * d_hx
                ex[i, j, k] += cbx[i, j, k] * ((ik[j] - 1.0) * d_hz + psi_x[i, q, k])
                ez[i, j, k] -= cbz[i, j, k] * ((ik[j] - 1.0) * d_hx + psi_z[i, q, k])


@nb.njit(parallel=True, cache=True)
def cpml_e_z(hx, hy, ex, ey, cbx, cby, sl, ik, b, c, psi_x, psi_y):
    nx, ny, nz = hx.shape
    for i in prange(1, nx - 1):
        for j in range(1, ny - 1):
            for q in range(sl.shape[0]):
                k = sl[q]
                if k < 1 or k >= nz - 1:
                    continue
                d_hy = hy[i, j, k] - hy[i, j, k - 1]
                d_hx = hx[i, j, k] - hx[i, j, k - 1]
                psi_x[i, j, q] = b[k] * psi_x[i, j, q] + c[k] * d_hy
                psi_y[i, j, q] = b[k] * psi_y[i, j, q] + c[k] * d_hx
                ex[i, j, k] -= cbx[i, j, k] * ((ik[k] - 1.0) * d_hy + psi_x[i, j, q])
                ey[i, j, k] += cby[i, j, k] * ((ik[k] - 1.0) * d_hx + psi_y[i, j, q])


@nb.njit(cache=True)
def update_h_periodic(ex, ey, ez, hx, hy, hz, s):
    nx, ny, nz = ex.shape
    for i in range(nx):
        ip = (i + 1) % nx
        for j in range(ny):
            jp = (j + 1) % ny
            for k in range(nz):
                kp = (k + 1) % nz
                hx[i, j, k] -= s * ((ez[i, jp, k] - ez[i, j, k]) - (ey[i, j, kp] - ey[i, j, k]))
                hy[i, j, k] -= s * ((ex[i, j, kp] - ex[i, j, k]) - (ez[ip, j, k] - ez[i, j, k]))
                hz[i, j, k] -= s * ((ey[ip, j, k] - ey[i, j, k]) - (ex[i, jp, k] - ex[i, j, k]))


@nb.njit(cache=True)
def update_e_periodic(ex, ey, ez, hx, hy, hz, cbx, cby, cbz):
    nx, ny, nz = ex.shape
    for i in range(nx):
        im = (i - 1) % nx
        for j in range(ny):
            jm = (j - 1) % ny
            for k in range(nz):
                km = (k - 1) % nz
                ex[i, j, k] += cbx[i, j, k] * ((hz[i, j, k] - hz[i, jm, k]) - (hy[i, j, k] - hy[i, j, km]))
                ey[i, j, k] += cby[i, j, k] * ((hx[i, j, k] - hx[i, j, km]) - (hz[i, j, k] - hz[im, j, k]))
                ez[i, j, k] += cbz[i, j, k] * ((hy[i, j, k] - hy[im, j, k]) - (hx[i, j, k] - hx[i, jm, k]))


@nb.njit(cache=True)
def ade_polarization(e_flat, idx, weight, p_now, p_prev, a1, a2, a3, dp):
    """Advance every pole's polarization from E^n; ``dp`` receives P^{n+1} - P^n."""
    npole = a1.shape[0]
    for m in range(idx.shape[0]):
        en = e_flat[idx[m]] * weight[m]
        acc = 0.0
        for q in range(npole):
            pn = p_now[q, m]
            pnew = a1[q] * pn + a2[q] * p_prev[q, m] + a3[q] * en
            p_prev[q, m] = pn
            p_now[q, m] = pnew
            acc += pnew - pn
        dp[m] = acc


@nb.njit(cache=True)
def ade_correct(e_flat, idx, inv_eps, dp):
    for m in range(idx.shape[0]):
        e_flat[idx[m]] -= dp[m] * inv_eps[m]


@nb.njit(cache=True)
def tfsf_h(hy, hz, ex_inc, s, i0, i1, j0, j1, k0, k1, off):
    # Hy just outside the z faces, Hz just outside the y faces
    for i in range(i0, i1):
        for j in range(j0, j1 + 1):
            hy[i, j, k0 - 1] += s * ex_inc[k0 + off]
            hy[i, j, k1] -= s * ex_inc[k1 + off]
        for k in range(k0, k1 + 1):
            hz[i, j0 - 1, k] -= s * ex_inc[k + off]
            hz[i, j1, k] += s * ex_inc[k + off]


@nb.njit(cache=True)
def tfsf_e(ex, ez, hy_inc, cb, i0, i1, j0, j1, k0, k1, off):
    for i in range(i0, i1):
        for j in range(j0, j1 + 1):
            ex[i, j, k0] += cb * hy_inc[k0 - 1 + off]
            ex[i, j, k1] -= cb * hy_inc[k1 + off]
    for j in range(j0, j1 + 1):
        for k in range(k0, k1):
            ez[i0, j, k] -= cb * hy_inc[k + off]
            ez[i1, j, k] += cb * hy_inc[k + off]


@nb.njit(cache=True)
def aux_update_h(ex, hy, s, lh1, lh2):
    for a in range(ex.shape[0] - 1):
        hy[a] = lh1[a] * hy[a] - lh2[a] * s * (ex[a + 1] - ex[a])


@nb.njit(cache=True)
def aux_update_e(ex, hy, le1, le2):
    for a in range(1, ex.shape[0] - 1):
        ex[a] = le1[a] * ex[a] - le2[a] * (hy[a] - hy[a - 1])


@nb.njit(cache=True)
def dft_single(f, acc, phasor):
    nw = phasor.shape[0]
    na, nb_ = f.shape
    for a in range(na):
        for b in range(nb_):
            v = f[a, b]
            if v != 0.0:
                for w in range(nw):
                    acc[w, a, b] += phasor[w] * v


@nb.njit(cache=True)
def dft_pair(f1, f2, acc, phasor):
    nw = phasor.shape[0]
    na, nb_ = f1.shape
    for a in range(na):
        for b in range(nb_):
            v = 0.5 * (f1[a, b] + f2[a, b])
            if v != 0.0:
                for w in range(nw):
                    acc[w, a, b] += phasor[w] * v


@nb.njit(parallel=True, cache=True)
def field_energy(ex, ey, ez, hx, hy, hz, epsx, epsy, epsz):
    nx = ex.shape[0]
    parts = np.zeros(nx)
    for i in prange(nx):
        acc = 0.0
        for j in range(ex.shape[1]):
            for k in range(ex.shape[2]):
                acc += (epsx[i, j, k] * ex[i, j, k] ** 2 + epsy[i, j, k] * ey[i, j, k] ** 2
                        + epsz[i, j, k] * ez[i, j, k] ** 2
                        + hx[i, j, k] ** 2 + hy[i, j, k] ** 2 + hz[i, j, k] ** 2)
        parts[i] = acc
    return parts.sum()


@nb.njit(cache=True)
def max_abs(a):
    """Largest magnitude in ``a``; inf if any entry is not finite."""
    m = 0.0
    flat = a.ravel()
    for n in range(flat.shape[0]):
        v = abs(flat[n])
        if not np.isfinite(v):
            return np.inf
        if v > m:
            m = v
    return m
