"""Linear chirp generation, matched filtering, and range estimation.

The canonical PCM rate is 278 125 Hz, i.e. the 4.45 MHz PDM clock divided
by the acquisition module's decimation factor of 16.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .errors import UnreliableEstimateError
from .geometry import SPEED_OF_SOUND_MPS

DEFAULT_SAMPLE_RATE_HZ = 278_125.0
PCM_MAGIC = b"PCM1"
_PCM_HEADER = struct.Struct("<4sIdQ")
_PCM_PAD = 32 - _PCM_HEADER.size

WINDOWS = ("none", "hann")


@dataclass(frozen=True)
class ChirpSpec:
    """Linear sweep parameters; defaults give the stock 36-44 kHz, 3 ms probe."""

    f_start_hz: float = 36_000.0
    f_end_hz: float = 44_000.0
    duration_s: float = 0.003
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be > 0")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        nyquist = self.sample_rate_hz / 2.0
        for name, f in (("f_start_hz", self.f_start_hz), ("f_end_hz", self.f_end_hz)):
            if not 0 < f < nyquist:
                raise ValueError(f"{name}={f} violates Nyquist for fs={self.sample_rate_hz}")


@dataclass(frozen=True, eq=False)
class PcmTrace:
    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 1:
            raise ValueError("samples must be 1-D")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be > 0")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class RangeEstimate:
    delay_s: float
    range_m: float
    peak_value: float
    peak_to_noise_db: float

    def __post_init__(self):
        if self.range_m < 0:
            raise ValueError("range_m must be >= 0")


def chirp_samples_at(spec: ChirpSpec, times_s: np.ndarray, window: str = "none") -> np.ndarray:
    """Evaluate the sweep at arbitrary times; zero outside [0, duration).

    The quadratic phase 2*pi*(f0*t + (f1-f0)/(2T)*t^2) sweeps the
    instantaneous frequency linearly from f_start to f_end.  The hann
    window is the continuous 0.5 - 0.5*cos(2*pi*t/T) taper, so sampled
    and fractionally delayed evaluations agree exactly.
    """
    if window not in WINDOWS:
        raise ValueError(f"window must be one of {WINDOWS}")
    t = np.asarray(times_s, dtype=float)
    rate = (spec.f_end_hz - spec.f_start_hz) / (2.0 * spec.duration_s)
    phase = 2.0 * np.pi * (spec.f_start_hz * t + rate * t * t)
    out = np.sin(phase)
    if window == "hann":
        out = out * (0.5 - 0.5 * np.cos(2.0 * np.pi * t / spec.duration_s))
    mask = (t >= 0.0) & (t < spec.duration_s)
    return np.where(mask, out, 0.0)


def generate_chirp(spec: ChirpSpec, window: str = "none") -> PcmTrace:
    """Sampled sweep of floor(duration * fs) samples."""
    n = int(math.floor(spec.duration_s * spec.sample_rate_hz))
    t = np.arange(n) / spec.sample_rate_hz
    return PcmTrace(samples=chirp_samples_at(spec, t, window),
                    sample_rate_hz=spec.sample_rate_hz)


def matched_filter(received: PcmTrace, template: PcmTrace) -> PcmTrace:
    """Cross-correlate the received trace with the template.

    Output index k is the lag in samples: k = 0 aligns the template start
    with the trace start.  Length equals the received trace.
    """
    if template.samples.size == 0:
        raise ValueError("template must be non-empty")
    if not math.isclose(received.sample_rate_hz, template.sample_rate_hz,
                        rel_tol=1e-12, abs_tol=0.0):
        raise ValueError("received and template sample rates differ")
    m = template.samples.size
    full = scipy.signal.fftconvolve(received.samples, template.samples[::-1], mode="full")
    out = full[m - 1:m - 1 + received.samples.size]
    return PcmTrace(samples=out, sample_rate_hz=received.sample_rate_hz)


def estimate_range(mf_output: PcmTrace, emission_start_index: int,
                   c_mps: float = SPEED_OF_SOUND_MPS, *,
                   template_length: int) -> RangeEstimate:
    """Locate the strongest correlation peak and convert it to range.

    The peak is the argmax of the raw correlation (echoes are synthesized
    with positive polarity).  The noise floor is the median magnitude
    outside +-2 template lengths of the peak; a peak within one template
    length of either trace edge, or earlier than the emission start, is
    rejected as unreliable.
    """
    samples = mf_output.samples
    if samples.size == 0:
        raise ValueError("matched-filter output must be non-empty")
    if template_length < 1:
        raise ValueError("template_length must be >= 1")
    peak_idx = int(np.argmax(samples))
    guard = template_length
    if peak_idx < guard or peak_idx >= samples.size - guard:
        raise UnreliableEstimateError(
            f"correlation peak at {peak_idx} is within {guard} samples of a trace edge")
    if peak_idx < emission_start_index:
        raise UnreliableEstimateError("correlation peak precedes the emission start")
    delay_s = (peak_idx - emission_start_index) / mf_output.sample_rate_hz
    lo = max(peak_idx - 2 * template_length, 0)
    hi = min(peak_idx + 2 * template_length + 1, samples.size)
    noise_region = np.abs(np.concatenate((samples[:lo], samples[hi:])))
    peak_value = float(samples[peak_idx])
    floor = float(np.median(noise_region)) if noise_region.size else 0.0
    if floor > 0:
        peak_to_noise_db = 20.0 * math.log10(abs(peak_value) / floor)
    else:
        peak_to_noise_db = math.inf
    return RangeEstimate(delay_s=delay_s, range_m=c_mps * delay_s / 2.0,
                         peak_value=peak_value, peak_to_noise_db=peak_to_noise_db)


# -- PCM trace files ---------------------------------------------------------


def save_pcm(trace: PcmTrace, path) -> None:
    """32-byte header (magic, version, rate, length) + float32 LE samples."""
    header = _PCM_HEADER.pack(PCM_MAGIC, 1, trace.sample_rate_hz, trace.samples.size)
    with open(path, "wb") as fh:
        fh.write(header + b"\x00" * _PCM_PAD)
        fh.write(trace.samples.astype("<f4").tobytes())


def load_pcm(path) -> PcmTrace:
    with open(path, "rb") as fh:
        raw = fh.read(32)
        if len(raw) < 32:
            raise ValueError(f"{path}: truncated PCM header")
        magic, version, rate, length = _PCM_HEADER.unpack(raw[:_PCM_HEADER.size])
        if magic != PCM_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != 1:
            raise ValueError(f"{path}: unsupported version {version}")
        body = fh.read(4 * length)
    if len(body) != 4 * length:
        raise ValueError(f"{path}: truncated PCM body")
    return PcmTrace(samples=np.frombuffer(body, dtype="<f4").astype(float),
                    sample_rate_hz=rate)


def save_trace_csv(trace: PcmTrace, path) -> None:
    """time_s, amplitude rows for plotting."""
    with open(path, "w", newline="") as fh:
        fh.write("time_s,amplitude\n")
        for n, v in enumerate(trace.samples):
            fh.write(f"{n / trace.sample_rate_hz:.9f},{v:.8g}\n")
