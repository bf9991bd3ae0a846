"""
FDTD cross section of a gold sphere
===================================

A coarse (4 nm) run against Mie theory. Takes about a minute on one core.
"""
import time

import numpy as np

from nanoplasmon import fdtd, materials, mie

gold = materials.fit_drude_lorentz(materials.johnson_christy_gold(), (450.0, 750.0))
sphere = mie.Sphere(100.0, gold)
wl = np.arange(500.0, 651.0, 10.0)

t = time.perf_counter()
sigma = fdtd.simulate(fdtd.SceneConfig((sphere,)), fdtd.GridSpec(cell=4.0), wl)
print(f"{time.perf_counter() - t:.0f} s, {sigma.meta['steps']} steps")

ref = mie.mie_cross_sections(sphere, 1.0, wl)["scattering"].values
for lam, a, b in zip(wl, sigma.values, ref):
    print(f"{lam:5.0f} nm  FDTD {a:9.0f}  Mie {b:9.0f}  {(a - b) / b:+6.1%}")
