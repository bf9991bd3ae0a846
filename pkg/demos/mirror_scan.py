"""
A dipole between two glass surfaces
===================================

Peak shift as the upper surface approaches a sphere resting on the
lower one. Near contact the shift rises steeply; far away it oscillates
with half the wavelength in the medium.
"""
import numpy as np

from nanoplasmon import coupled_dipole as cd
from nanoplasmon.spectrum import ShiftCurve
from nanoplasmon import spectra

grid = np.arange(450.0, 750.5, 2.0)
gaps = np.concatenate([np.arange(5.0, 100.0, 5.0), np.arange(100.0, 1500.0, 10.0)])
curve = cd.dipole_between_mirrors_shift(50.0, gaps, 1.0, 2.25, 2.25, "parallel", grid=grid)
lower = float(curve.meta["lower_only_shift_nm"])
print(f"reference peak {curve.reference_peak:.1f} nm, lower surface alone {lower:+.2f} nm")

for g in (5, 10, 20, 50, 100, 200, 400, 800, 1200):
    i = np.argmin(np.abs(curve.separations - g))
    print(f"  gap {curve.separations[i]:6.0f} nm: {curve.peak_shift[i]:+.2f} nm")

# %%
# fit the far-zone ripple to a sinusoid
far = curve.separations >= 300
d = curve.separations[far]
ripple = ShiftCurve(d, curve.peak_shift[far] - lower, curve.reference_peak)
flat = ShiftCurve(d, np.zeros_like(d), curve.reference_peak)
corr, _ = spectra.fit_interference_correction(ripple, flat, period_bounds=(100.0, 600.0))
print(f"ripple period {corr.period:.0f} nm, amplitude {corr.amplitude:.3f} nm")
