"""Scan trajectories of the moving particle.

A trajectory file is two-column plain text (lateral offset nm, height nm)
with ``#`` comments. Heights are raw topography; the shear-force distance
control keeps the probe-held particle a further ~15 nm above it, so that
vertical offset is added on ingestion.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrajectoryError

SHEAR_FORCE_OFFSET = 15.0


@dataclass(frozen=True, eq=False)
class ScanTrajectory:
    """Ordered (lateral offset, height) samples of the moving particle.

    ``heights`` already include ``vertical_offset``.
    """

    lateral: np.ndarray
    heights: np.ndarray
    pixel_size: float = 25.0
    vertical_offset: float = SHEAR_FORCE_OFFSET
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.lateral, dtype=float).ravel()
        h = np.asarray(self.heights, dtype=float).ravel()
        if x.shape != h.shape:
            raise TrajectoryError("lateral and height columns differ in length")
        if x.size < 2:
            raise TrajectoryError(f"need at least 2 samples, found {x.size}")
        diff = np.diff(x)
        if not (np.all(diff > 0) or np.all(diff < 0)):
            raise TrajectoryError("lateral offsets must be strictly monotonic")
        if np.any(h - self.vertical_offset < 0):
            raise TrajectoryError("heights must be non-negative")
        if not self.pixel_size > 0:
            raise TrajectoryError("pixel size must be positive")
        object.__setattr__(self, "lateral", x)
        object.__setattr__(self, "heights", h)

    def __len__(self):
        return self.lateral.size

    @property
    def raw_heights(self):
        return self.heights - self.vertical_offset

    @property
    def samples(self):
        return list(zip(self.lateral.tolist(), self.heights.tolist()))

    def to_text(self):
        lines = [
            f"# pixel_size_nm: {self.pixel_size:g}",
            f"# vertical_offset_nm: {self.vertical_offset:g} (removed on save)",
            "# columns: lateral_nm height_nm",
        ]
        lines += [f"# {k}: {v}" for k, v in self.meta.items()]
        lines += [f"{x:.10g} {h:.10g}" for x, h in zip(self.lateral, self.raw_heights)]
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text())


def parse_trajectory(text, vertical_offset=SHEAR_FORCE_OFFSET, pixel_size=None):
    """Parse two-column trajectory text; see :func:`ingest_trajectory`."""
    rows = []
    header_pixel = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped.lstrip("#").strip()
            if body.startswith("pixel_size_nm:"):
                header_pixel = float(body.split(":", 1)[1])
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise TrajectoryError(f"expected 2 columns, found {len(parts)}", line=lineno)
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise TrajectoryError(f"non-numeric value in {stripped!r}", line=lineno) from None
    if len(rows) < 2:
        raise TrajectoryError(f"need at least 2 samples, found {len(rows)}")
    data = np.array(rows)
    if pixel_size is None:
        pixel_size = header_pixel
    if pixel_size is None:
        pixel_size = float(np.min(np.abs(np.diff(data[:, 0]))))
    return ScanTrajectory(data[:, 0], data[:, 1] + vertical_offset, pixel_size, vertical_offset)


def ingest_trajectory(path, vertical_offset=SHEAR_FORCE_OFFSET, pixel_size=None):
    """Read a trajectory file and add the vertical offset to its heights.

    Raises
    ------
    TrajectoryError
        Malformed row (with its line number), fewer than two rows,
        non-monotonic lateral offsets or negative heights.
    FileNotFoundError
    """
    return parse_trajectory(Path(path).read_text(), vertical_offset, pixel_size)


def synthetic_topography(lateral, diameter=100.0, broadening=15.0):
    """Apparent height of a sphere as seen by a scanned sphere.

    The fixed particle is imaged through the probe-held particle, so the
    apparent profile is a circular cap of radius ``diameter + broadening``
    centred ``broadening`` below the substrate plane. The peak height is
    ``diameter``; the apparent width is enlarged by the convolution.
    """
    d = np.asarray(lateral, dtype=float)
    r = diameter + broadening
    h = np.sqrt(np.clip(r * r - d * d, 0.0, None)) - broadening
    return np.clip(h, 0.0, None)


def synthetic_trajectory(start, stop, step=25.0, diameter=100.0, broadening=15.0,
                         vertical_offset=SHEAR_FORCE_OFFSET):
    """Trajectory sampled from :func:`synthetic_topography`.

    The result is labelled as synthetic in its metadata.
    """
    n = int(round((stop - start) / step)) + 1
    x = start + step * np.arange(n)
    h = synthetic_topography(x, diameter, broadening)
    return ScanTrajectory(x, h + vertical_offset, abs(step), vertical_offset,
                          meta={"source": "synthetic sphere-over-sphere topography"})
