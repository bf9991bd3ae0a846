"""Spectrum and shift-curve containers and their plain-text formats.

Spectrum files are two columns (wavelength nm, value) preceded by ``#``
header lines of the form ``# key: value``. Shift curves are three columns
(separation nm, shift nm, reference peak nm).
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPECTRUM_KINDS = ("scattering", "extinction", "absorption", "normalized")
SEPARATION_KINDS = ("center-to-center", "surface-to-surface", "projected", "gap")


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Values sampled on a strictly increasing wavelength grid (nm).

    Cross-section kinds carry nm**2 and must be non-negative (a small
    negative round-off is tolerated for absorption).
    """

    wavelengths: np.ndarray
    values: np.ndarray
    kind: str = "scattering"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if wl.shape != v.shape:
            raise ValueError("wavelengths and values must have equal length")
        if wl.size == 0:
            raise ValueError("empty spectrum")
        if np.any(np.diff(wl) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if self.kind not in SPECTRUM_KINDS:
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        if self.kind in ("scattering", "extinction"):
            if np.any(v < 0):
                raise ValueError(f"{self.kind} cross section must be non-negative")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.wavelengths.size

    def scaled(self, factor):
        return Spectrum(self.wavelengths, self.values * factor, self.kind, dict(self.meta))

    def window(self, lo, hi):
        sel = (self.wavelengths >= lo) & (self.wavelengths <= hi)
        return Spectrum(self.wavelengths[sel], self.values[sel], self.kind, dict(self.meta))

    def normalized(self):
        return Spectrum(
            self.wavelengths, self.values / np.max(self.values), "normalized", dict(self.meta)
        )

    def to_text(self):
        units = "dimensionless" if self.kind == "normalized" else "nm^2"
        header = [f"kind: {self.kind}", f"columns: wavelength_nm value_{units}"]
        header += [f"{k}: {v}" for k, v in self.meta.items()]
        return _format_table(header, np.column_stack([self.wavelengths, self.values]))

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path):
        header, data = _parse_table(Path(path).read_text(), ncols=2)
        kind = header.pop("kind", "scattering")
        header.pop("columns", None)
        return cls(data[:, 0], data[:, 1], kind=kind, meta=header)


@dataclass(frozen=True, eq=False)
class ShiftCurve:
    """Peak shift versus separation.

    ``flags`` holds a per-point low-confidence marker from the peak fits.
    """

    separations: np.ndarray
    peak_shift: np.ndarray
    reference_peak: float
    separation_kind: str = "center-to-center"
    flags: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.separations, dtype=float).ravel()
        s = np.asarray(self.peak_shift, dtype=float).ravel()
        if d.shape != s.shape:
            raise ValueError("separations and peak_shift must have equal length")
        if d.size > 1:
            diff = np.diff(d)
            if not (np.all(diff > 0) or np.all(diff < 0)):
                raise ValueError("separations must be strictly monotonic")
        if self.separation_kind not in SEPARATION_KINDS:
            raise ValueError(f"unknown separation kind {self.separation_kind!r}")
        flags = (
            np.zeros(d.shape, dtype=bool)
            if self.flags is None
            else np.asarray(self.flags, dtype=bool).ravel()
        )
        if flags.shape != d.shape:
            raise ValueError("flags must match separations")
        object.__setattr__(self, "separations", d)
        object.__setattr__(self, "peak_shift", s)
        object.__setattr__(self, "flags", flags)
        object.__setattr__(self, "reference_peak", float(self.reference_peak))

    def __len__(self):
        return self.separations.size

    def peak_wavelengths(self):
        return self.reference_peak + self.peak_shift

    def to_text(self):
        header = [
            f"separation_kind: {self.separation_kind}",
            "columns: separation_nm shift_nm reference_peak_nm",
        ]
        header += [f"{k}: {v}" for k, v in self.meta.items()]
        ref = np.full(self.separations.shape, self.reference_peak)
        return _format_table(header, np.column_stack([self.separations, self.peak_shift, ref]))

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path):
        header, data = _parse_table(Path(path).read_text(), ncols=3)
        kind = header.pop("separation_kind", "center-to-center")
        header.pop("columns", None)
        return cls(data[:, 0], data[:, 1], float(data[0, 2]), separation_kind=kind, meta=header)


def _format_table(header_lines, data):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    np.savetxt(buf, data, fmt="%.10g")
    return buf.getvalue()


def _parse_table(text, ncols):
    header = {}
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped.lstrip("#").strip()
            if ":" in body:
                key, _, value = body.partition(":")
                header[key.strip()] = value.strip()
            continue
        parts = stripped.split()
        if len(parts) != ncols:
            raise ValueError(f"line {lineno}: expected {ncols} columns, found {len(parts)}")
        rows.append([float(p) for p in parts])
    if not rows:
        raise ValueError("no data rows")
    return header, np.array(rows)


def write_force_table(path, separations, forces, meta=None):
    header = ["columns: separation_nm force_pN", "sign: negative = attractive"]
    header += [f"{k}: {v}" for k, v in (meta or {}).items()]
    Path(path).write_text(_format_table(header, np.column_stack([separations, forces])))
