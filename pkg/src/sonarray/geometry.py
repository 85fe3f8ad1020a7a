"""Sensor layout and far-field narrowband steering vectors.

Conventions used throughout the package:

* Directions are (azimuth, elevation) pairs in degrees, both restricted to
  [-90, 90] (front hemisphere).  The look unit vector is
  ``u = (cos(el)*sin(az), sin(el), cos(el)*cos(az))``, so boresight
  (0, 0) is the array normal +z.
* Steering phases are ``+j * 2*pi*f * (p . u) / c`` relative to the
  reference point (phase advance toward the source).  Snapshot synthesis
  and capture emulation share the same sign.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_SOUND_MPS = 343.0  # dry air at 20 C; overridable everywhere it appears

DEFAULT_ELEMENT_COUNT = 16
DEFAULT_DIAMETER_M = 0.030


@dataclass(frozen=True)
class Direction:
    """A look direction in degrees, limited to the front hemisphere."""

    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        for name, value in (("azimuth_deg", self.azimuth_deg),
                            ("elevation_deg", self.elevation_deg)):
            if not (-90.0 <= float(value) <= 90.0) or not math.isfinite(float(value)):
                raise ValueError(f"{name} must lie in [-90, 90], got {value!r}")


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Element positions in meters plus the emitter reference point."""

    elements: np.ndarray       # (L, 3)
    reference_point: np.ndarray  # (3,)

    def __post_init__(self):
        elements = np.array(self.elements, dtype=float)
        reference = np.array(self.reference_point, dtype=float)
        if elements.ndim != 2 or elements.shape[1] != 3 or elements.shape[0] < 1:
            raise ValueError("elements must be an (L, 3) array with L >= 1")
        if reference.shape != (3,):
            raise ValueError("reference_point must be a 3-vector")
        if elements.shape[0] > 1:
            deltas = elements[:, None, :] - elements[None, :, :]
            dist = np.linalg.norm(deltas, axis=-1)
            dist[np.diag_indices(len(elements))] = np.inf
            if dist.min() <= 1e-6:
                raise ValueError("element positions must be pairwise distinct (> 1e-6 m)")
        elements.flags.writeable = False
        reference.flags.writeable = False
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "reference_point", reference)

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]


@dataclass(frozen=True, eq=False)
class SteeringVector:
    """Unit-modulus array response for one (frequency, direction) pair."""

    entries: np.ndarray  # complex (L,)
    frequency_hz: float
    direction: Direction

    def __post_init__(self):
        entries = np.array(self.entries, dtype=complex)
        if entries.ndim != 1 or entries.size < 1:
            raise ValueError("entries must be a non-empty complex vector")
        if np.max(np.abs(np.abs(entries) - 1.0)) > 1e-12:
            raise ValueError("steering entries must have unit modulus")
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)


def build_uniform_circular_array(n_elements: int, diameter_m: float) -> ArrayGeometry:
    """Place ``n_elements`` uniformly on a circle in the z = 0 plane.

    Element 0 sits on the +x axis; element l at angle 2*pi*l/n.  The
    reference point (emitter) is the origin.
    """
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    if not diameter_m > 0:
        raise ValueError("diameter_m must be > 0")
    radius = diameter_m / 2.0
    angles = 2.0 * np.pi * np.arange(n_elements) / n_elements
    elements = np.column_stack((radius * np.cos(angles),
                                radius * np.sin(angles),
                                np.zeros(n_elements)))
    return ArrayGeometry(elements=elements, reference_point=np.zeros(3))


def default_circular_array() -> ArrayGeometry:
    """The stock 16-element, 30 mm aperture used by the CLI presets."""
    return build_uniform_circular_array(DEFAULT_ELEMENT_COUNT, DEFAULT_DIAMETER_M)


def unit_vectors(azimuth_deg, elevation_deg) -> np.ndarray:
    """Vectorized az/el-to-Cartesian conversion; returns shape (..., 3)."""
    az = np.deg2rad(np.asarray(azimuth_deg, dtype=float))
    el = np.deg2rad(np.asarray(elevation_deg, dtype=float))
    az, el = np.broadcast_arrays(az, el)
    return np.stack((np.cos(el) * np.sin(az),
                     np.sin(el),
                     np.cos(el) * np.cos(az)), axis=-1)


def direction_unit_vector(d: Direction) -> np.ndarray:
    """Unit look vector for a Direction; boresight (0, 0) maps to +z."""
    return unit_vectors(d.azimuth_deg, d.elevation_deg)


def steering_matrix(geometry: ArrayGeometry, azimuth_deg, elevation_deg,
                    frequency_hz: float, c_mps: float = SPEED_OF_SOUND_MPS) -> np.ndarray:
    """Steering vectors for many directions at once.

    ``azimuth_deg`` and ``elevation_deg`` are broadcast against each other
    and flattened; the result has shape (L, M) with one column per
    direction, entries exp(+j*2*pi*f*(p.u)/c).
    """
    if not frequency_hz > 0:
        raise ValueError("frequency_hz must be > 0")
    if not c_mps > 0:
        raise ValueError("c_mps must be > 0")
    u = unit_vectors(azimuth_deg, elevation_deg).reshape(-1, 3)
    p = geometry.elements - geometry.reference_point
    phase = (2.0 * np.pi * frequency_hz / c_mps) * (p @ u.T)
    return np.exp(1j * phase)


def steering_vector(geometry: ArrayGeometry, direction: Direction,
                    frequency_hz: float, c_mps: float = SPEED_OF_SOUND_MPS) -> SteeringVector:
    """Far-field plane-wave steering vector for a single direction."""
    entries = steering_matrix(geometry, direction.azimuth_deg, direction.elevation_deg,
                              frequency_hz, c_mps)[:, 0]
    return SteeringVector(entries=entries, frequency_hz=float(frequency_hz),
                          direction=direction)


def save_geometry_csv(geometry: ArrayGeometry, path) -> None:
    """Write one row per element with columns x_m, y_m, z_m, index."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_m", "y_m", "z_m", "index"])
        for i, p in enumerate(geometry.elements):
            writer.writerow([f"{p[0]:.17g}", f"{p[1]:.17g}", f"{p[2]:.17g}", i])


def load_geometry_csv(path) -> ArrayGeometry:
    """Read a geometry CSV written by :func:`save_geometry_csv`.

    The header row is required; rows are sorted by their index column.
    The reference point is the origin.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty geometry CSV") from None
        expected = ["x_m", "y_m", "z_m", "index"]
        if [h.strip() for h in header] != expected:
            raise ValueError(f"{path}: expected header {','.join(expected)}")
        rows = []
        for row in reader:
            if not row:
                continue
            x, y, z, idx = row
            rows.append((int(idx), float(x), float(y), float(z)))
    if not rows:
        raise ValueError(f"{path}: no element rows")
    rows.sort()
    elements = np.array([[x, y, z] for _, x, y, z in rows])
    return ArrayGeometry(elements=elements, reference_point=np.zeros(3))


def geometry_fingerprint(geometry: ArrayGeometry) -> str:
    """Stable SHA-256 over the element layout, for capture manifests."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(geometry.elements, dtype="<f8").tobytes())
    digest.update(np.ascontiguousarray(geometry.reference_point, dtype="<f8").tobytes())
    return digest.hexdigest()
