"""Narrowband scene models: analytic covariances and synthetic snapshots.

A :class:`Scene` is one desired point source, zero or more uncorrelated
interferers, and spatially white sensor noise.  The analytic covariance is

    R = sd2 * d d^H  +  sum_k sk2 * g_k g_k^H  +  sv2 * I

with d and g_k steering vectors of the scene's directions.  Snapshot
synthesis draws every signal as an independent circular complex Gaussian
of the matching power, which reproduces that covariance exactly in
expectation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import (SPEED_OF_SOUND_MPS, ArrayGeometry, Direction,
                       steering_matrix)

SNAPSHOT_MAGIC = b"SNAP"
_SNAP_HEADER = struct.Struct("<4sHHIQd")  # magic, version, reserved, L, N, rate
_SNAP_PAD = 32 - _SNAP_HEADER.size


@dataclass(frozen=True)
class PointSource:
    direction: Direction
    power: float

    def __post_init__(self):
        if not self.power >= 0:
            raise ValueError("source power must be >= 0")


@dataclass(frozen=True)
class Scene:
    desired: PointSource
    interferers: tuple = ()
    noise_power: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "interferers", tuple(self.interferers))
        if not self.noise_power >= 0:
            raise ValueError("noise_power must be >= 0")


@dataclass(frozen=True, eq=False)
class SnapshotBlock:
    """N complex-envelope snapshots across L channels, shape (L, N)."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.array(self.samples, dtype=complex)
        if samples.ndim != 2 or samples.shape[1] < 1 or samples.shape[0] < 1:
            raise ValueError("samples must be a non-empty (L, N) matrix")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be > 0")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.samples.shape[1]


def validate_covariance(R: np.ndarray, *, hermitian_tol: float = 1e-12,
                        psd_tol: float = 1e-9) -> None:
    """Raise ValueError unless R is Hermitian and PSD within tolerance."""
    R = np.asarray(R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("covariance must be square")
    asym = np.max(np.abs(R - R.conj().T))
    if asym > hermitian_tol:
        raise ValueError(f"covariance is not Hermitian (max asymmetry {asym:.3e})")
    eigs = np.linalg.eigvalsh(R)
    floor = -psd_tol * max(np.trace(R).real, 0.0) / R.shape[0]
    if eigs.min() < floor:
        raise ValueError(f"covariance is not PSD (min eigenvalue {eigs.min():.3e})")


def _scene_steering(geometry, scene, frequency_hz, c_mps):
    directions = [scene.desired.direction] + [s.direction for s in scene.interferers]
    az = [d.azimuth_deg for d in directions]
    el = [d.elevation_deg for d in directions]
    D = steering_matrix(geometry, az, el, frequency_hz, c_mps)
    return D[:, 0], D[:, 1:]


def covariance_analytic(geometry: ArrayGeometry, scene: Scene, frequency_hz: float,
                        c_mps: float = SPEED_OF_SOUND_MPS) -> np.ndarray:
    """Exact second-order covariance of the scene at one frequency."""
    d, G = _scene_steering(geometry, scene, frequency_hz, c_mps)
    L = geometry.n_elements
    R = scene.desired.power * np.outer(d, d.conj())
    for k, src in enumerate(scene.interferers):
        g = G[:, k]
        R = R + src.power * np.outer(g, g.conj())
    R = R + scene.noise_power * np.eye(L)
    return R


def interference_root(scene: Scene, geometry: ArrayGeometry, frequency_hz: float,
                      c_mps: float = SPEED_OF_SOUND_MPS) -> np.ndarray:
    """Columns g_k * sqrt(power_k); B B^H reproduces the interference part.

    With no interferers the result is an (L, 0) matrix, not an error.
    """
    _, G = _scene_steering(geometry, scene, frequency_hz, c_mps)
    powers = np.array([s.power for s in scene.interferers])
    return G * np.sqrt(powers)[None, :]


def synthesize_snapshots(geometry: ArrayGeometry, scene: Scene, frequency_hz: float,
                         c_mps: float = SPEED_OF_SOUND_MPS, n_snapshots: int = 1,
                         rng_seed: int = 0, *, sample_rate_hz: float = 1.0) -> SnapshotBlock:
    """Draw N independent snapshots of the scene.

    Draw order is fixed (desired, interferers in order, then noise) so a
    seed pins the exact block.
    """
    if n_snapshots < 1:
        raise ValueError("n_snapshots must be >= 1")
    d, G = _scene_steering(geometry, scene, frequency_hz, c_mps)
    L = geometry.n_elements
    rng = np.random.default_rng(rng_seed)

    def cgauss(power, shape):
        scale = np.sqrt(power / 2.0)
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    y = d[:, None] * cgauss(scene.desired.power, n_snapshots)[None, :]
    for k, src in enumerate(scene.interferers):
        y = y + G[:, k][:, None] * cgauss(src.power, n_snapshots)[None, :]
    y = y + cgauss(scene.noise_power, (L, n_snapshots))
    return SnapshotBlock(samples=y, sample_rate_hz=sample_rate_hz)


def sample_covariance(block: SnapshotBlock) -> np.ndarray:
    """R_hat = Y Y^H / N, symmetrized so it is exactly Hermitian."""
    Y = block.samples
    R = (Y @ Y.conj().T) / block.n_snapshots
    return (R + R.conj().T) / 2.0


# -- scene description files -------------------------------------------------
#
# Flat key-value text: "key = value" lines, "#" comments.  The desired
# source uses keys desired.azimuth_deg / desired.elevation_deg /
# desired.power; every "interferer.azimuth_deg" line begins a new
# interferer block.  Top-level keys: noise_power, frequency_hz, c_mps.


def format_scene(scene: Scene, frequency_hz: float, c_mps: float = SPEED_OF_SOUND_MPS) -> str:
    lines = [
        f"frequency_hz = {frequency_hz:.10g}",
        f"c_mps = {c_mps:.10g}",
        f"noise_power = {scene.noise_power:.10g}",
        f"desired.azimuth_deg = {scene.desired.direction.azimuth_deg:.10g}",
        f"desired.elevation_deg = {scene.desired.direction.elevation_deg:.10g}",
        f"desired.power = {scene.desired.power:.10g}",
    ]
    for src in scene.interferers:
        lines.append(f"interferer.azimuth_deg = {src.direction.azimuth_deg:.10g}")
        lines.append(f"interferer.elevation_deg = {src.direction.elevation_deg:.10g}")
        lines.append(f"interferer.power = {src.power:.10g}")
    return "\n".join(lines) + "\n"


def parse_scene_text(text: str, source: str = "<scene>") -> tuple:
    """Parse scene text; returns (Scene, frequency_hz, c_mps)."""
    top = {}
    desired = {}
    interferers = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", "expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            number = float(value)
        except ValueError:
            raise ConfigError(key, f"not a number: {value!r}") from None
        if key.startswith("desired."):
            desired[key.split(".", 1)[1]] = number
        elif key.startswith("interferer."):
            sub = key.split(".", 1)[1]
            if sub == "azimuth_deg" or current is None:
                current = {}
                interferers.append(current)
            current[sub] = number
        else:
            top[key] = number
    for req in ("azimuth_deg", "elevation_deg", "power"):
        if req not in desired:
            raise ConfigError(f"desired.{req}", "missing from scene description")
    sources = []
    for i, block in enumerate(interferers):
        for req in ("azimuth_deg", "elevation_deg", "power"):
            if req not in block:
                raise ConfigError(f"interferer.{req}", f"missing in interferer block {i + 1}")
        sources.append(PointSource(Direction(block["azimuth_deg"], block["elevation_deg"]),
                                   block["power"]))
    scene = Scene(
        desired=PointSource(Direction(desired["azimuth_deg"], desired["elevation_deg"]),
                            desired["power"]),
        interferers=tuple(sources),
        noise_power=top.get("noise_power", 0.0),
    )
    if "frequency_hz" not in top:
        raise ConfigError("frequency_hz", "missing from scene description")
    return scene, top["frequency_hz"], top.get("c_mps", SPEED_OF_SOUND_MPS)


def load_scene_file(path) -> tuple:
    with open(path) as fh:
        return parse_scene_text(fh.read(), source=str(path))


# -- snapshot block files ----------------------------------------------------


def save_snapshots(block: SnapshotBlock, path) -> None:
    """32-byte header then float64 (re, im) pairs in snapshot-major order."""
    L, N = block.samples.shape
    header = _SNAP_HEADER.pack(SNAPSHOT_MAGIC, 1, 0, L, N, block.sample_rate_hz)
    body = np.ascontiguousarray(block.samples.T, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + b"\x00" * _SNAP_PAD + body)


def load_snapshots(path) -> SnapshotBlock:
    with open(path, "rb") as fh:
        raw = fh.read(32)
        if len(raw) < 32:
            raise ValueError(f"{path}: truncated snapshot header")
        magic, version, _, L, N, rate = _SNAP_HEADER.unpack(raw[:_SNAP_HEADER.size])
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != 1:
            raise ValueError(f"{path}: unsupported version {version}")
        body = fh.read(16 * L * N)
    if len(body) != 16 * L * N:
        raise ValueError(f"{path}: truncated snapshot body")
    samples = np.frombuffer(body, dtype="<c16").reshape(N, L).T
    return SnapshotBlock(samples=samples, sample_rate_hz=rate)
