"""
Two coupled spheres along a scan trajectory
===========================================

Coupled-dipole shift curves for head-to-tail and side-by-side
polarization, plus the force estimate from the shift gradient.
"""
import numpy as np

from nanoplasmon import coupled_dipole as cd
from nanoplasmon import materials, spectra
from nanoplasmon.trajectory import synthetic_trajectory

gold = materials.johnson_christy_gold()
grid = np.arange(450.0, 750.5, 0.5)
traj = synthetic_trajectory(550.0, 0.0, -25.0)
geometry = cd.PairScanGeometry(100.0, gold)

# %%
# polarization along the pair axis couples head to tail (red shift);
# across it the dipoles sit side by side (blue shift)
cases = {
    "head-to-tail": cd.Illumination((0.0, 1.0, 0.0), (1.0, 0.0, 0.0)),
    "side-by-side": cd.Illumination((0.0, 0.0, -1.0), (0.0, 1.0, 0.0)),
}
curves = {k: cd.trajectory_shift_curve(traj, geometry, ill, grid) for k, ill in cases.items()}

print("  d (nm)  height  " + "  ".join(f"{k:>13s}" for k in curves))
for i, (d, h) in enumerate(traj.samples):
    row = "  ".join(f"{c.peak_shift[i]:+13.2f}" for c in curves.values())
    print(f"{d:8.0f} {h - traj.vertical_offset:7.1f}  {row}")

# %%
# the sample at d = 0 is lifted on top of the fixed particle, so the
# background index switches to the lifted value there
force = spectra.force_from_shift(curves["head-to-tail"])
near = force[(force[:, 0] >= 100) & (force[:, 0] <= 200)]
print("\nforce (pN) from the head-to-tail curve")
for d, f in near:
    print(f"  d = {d:5.0f} nm: {f:+.3f}")
