"""Command-line front end.

Subcommands: psf, scan, chirp, simulate, decode, bench.  Every run is
driven by a flat key-value config (file via --config, overrides via
repeatable --set key=value); all randomness derives from one seed.
Exit codes: 0 success, 2 usage/config error, 3 runtime data error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, acquisition, beamforming, framing, waveform
from ._kernels import BACKEND, available_backends
from .errors import ConfigError, SonarrayError
from .geometry import (Direction, build_uniform_circular_array,
                       default_circular_array, load_geometry_csv)
from .signalmodel import covariance_analytic, load_scene_file
from .waveform import ChirpSpec, generate_chirp

DEFAULTS = {
    "c_mps": "343",
    "frequency_hz": "40000",
    "seed": "0",
    "geometry.preset": "circular16",
    "geometry.csv": "",
    "geometry.elements": "16",
    "geometry.diameter_m": "0.030",
    "grid.az_start": "-90",
    "grid.az_stop": "90",
    "grid.az_step": "1",
    "grid.el_start": "-90",
    "grid.el_stop": "90",
    "grid.el_step": "1",
    "beamformer.kind": "mvdr",
    "beamformer.loading": "0",
    "psf.sources": "0,0;30,0;-45,-15",
    "psf.beamformers": "bartlett,mvdr",
    "psf.power": "1",
    "psf.noise_power": "0.01",
    "scene.file": "",
    "chirp.f_start_hz": "36000",
    "chirp.f_end_hz": "44000",
    "chirp.duration_s": "0.003",
    "chirp.sample_rate_hz": "278125",
    "chirp.window": "none",
    "simulate.azimuth_deg": "0",
    "simulate.elevation_deg": "0",
    "simulate.range_m": "1.0",
    "simulate.strength": "1.0",
    "simulate.duration_s": "3.0",
    "simulate.rate_hz": "10",
    "simulate.noise_db": "20",
    "simulate.channel": "0",
    "decode.rate_hz": "4450000",
    "decode.decimate": "false",
    "decode.factor": "16",
    "bench.payload_kib": "8",
    "bench.duration_s": "2.0",
    "bench.sdm_samples": "2000000",
}


class Config:
    """Typed access over the merged key-value map."""

    def __init__(self, values: dict):
        unknown = set(values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        self.values = dict(DEFAULTS)
        self.values.update(values)

    def get(self, key: str) -> str:
        return self.values[key]

    def get_float(self, key: str, *, positive: bool = False) -> float:
        raw = self.values[key]
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(key, f"not a number: {raw!r}") from None
        if positive and not value > 0:
            raise ConfigError(key, f"must be > 0, got {raw}")
        return value

    def get_int(self, key: str, *, minimum: int | None = None) -> int:
        raw = self.values[key]
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(key, f"not an integer: {raw!r}") from None
        if minimum is not None and value < minimum:
            raise ConfigError(key, f"must be >= {minimum}, got {raw}")
        return value

    def get_bool(self, key: str) -> bool:
        raw = self.values[key].strip().lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(key, f"not a boolean: {raw!r}")

    def geometry(self):
        csv_path = self.get("geometry.csv")
        if csv_path:
            try:
                return load_geometry_csv(csv_path)
            except (OSError, ValueError) as exc:
                raise ConfigError("geometry.csv", str(exc)) from None
        preset = self.get("geometry.preset")
        if preset == "circular16":
            return default_circular_array()
        if preset == "circular":
            return build_uniform_circular_array(
                self.get_int("geometry.elements", minimum=1),
                self.get_float("geometry.diameter_m", positive=True))
        raise ConfigError("geometry.preset", f"unknown preset {preset!r}")

    def grid(self) -> beamforming.GridSpec:
        try:
            return beamforming.GridSpec(
                az_start_deg=self.get_float("grid.az_start"),
                az_stop_deg=self.get_float("grid.az_stop"),
                az_step_deg=self.get_float("grid.az_step"),
                el_start_deg=self.get_float("grid.el_start"),
                el_stop_deg=self.get_float("grid.el_stop"),
                el_step_deg=self.get_float("grid.el_step"))
        except ValueError as exc:
            raise ConfigError(str(exc).split()[0], str(exc)) from None

    def chirp_spec(self) -> ChirpSpec:
        try:
            return ChirpSpec(
                f_start_hz=self.get_float("chirp.f_start_hz", positive=True),
                f_end_hz=self.get_float("chirp.f_end_hz", positive=True),
                duration_s=self.get_float("chirp.duration_s", positive=True),
                sample_rate_hz=self.get_float("chirp.sample_rate_hz", positive=True))
        except ValueError as exc:
            raise ConfigError("chirp", str(exc)) from None

    def chirp_window(self) -> str:
        window = self.get("chirp.window")
        if window not in waveform.WINDOWS:
            raise ConfigError("chirp.window", f"must be one of {waveform.WINDOWS}")
        return window


def load_config_file(path) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}", "expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                values[key] = value
    except OSError as exc:
        raise ConfigError("config", str(exc)) from None
    return values


def build_config(args, extra_overrides) -> Config:
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
    for item in list(args.set or []) + list(extra_overrides):
        if "=" not in item:
            raise ConfigError("--set", f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return Config(values)


def _parse_sources(text: str) -> list:
    sources = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(",")
        if len(pieces) != 2:
            raise ConfigError("psf.sources", f"expected 'az,el' pairs, got {part!r}")
        try:
            sources.append(Direction(float(pieces[0]), float(pieces[1])))
        except ValueError as exc:
            raise ConfigError("psf.sources", str(exc)) from None
    return sources


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_metrics(path, metrics: beamforming.PsfMetrics) -> None:
    with open(path, "w") as fh:
        fh.write(f"peak_azimuth_deg = {metrics.peak_direction.azimuth_deg:.10g}\n")
        fh.write(f"peak_elevation_deg = {metrics.peak_direction.elevation_deg:.10g}\n")
        fh.write(f"mainlobe_width_az_deg = {metrics.mainlobe_width_az_deg:.6g}\n")
        fh.write(f"mainlobe_width_el_deg = {metrics.mainlobe_width_el_deg:.6g}\n")
        fh.write(f"peak_sidelobe_db = {metrics.peak_sidelobe_db:.4f}\n")


def cmd_psf(args, extra) -> int:
    cfg = build_config(args, extra)
    geometry = cfg.geometry()
    grid = cfg.grid()
    sources = _parse_sources(cfg.get("psf.sources"))
    if not sources:
        print("psf: no sources requested; nothing to do", file=sys.stderr)
        return 0
    beamformers = [b.strip() for b in cfg.get("psf.beamformers").split(",") if b.strip()]
    for bf in beamformers:
        if bf not in beamforming.BEAMFORMERS:
            raise ConfigError("psf.beamformers", f"unknown beamformer {bf!r}")
    frequency = cfg.get_float("frequency_hz", positive=True)
    c_mps = cfg.get_float("c_mps", positive=True)
    power = cfg.get_float("psf.power", positive=True)
    noise = cfg.get_float("psf.noise_power")
    loading = cfg.get_float("beamformer.loading")
    out = _out_dir(args)
    for source in sources:
        for bf in beamformers:
            pmap, metrics = beamforming.psf(
                geometry, source, power, noise, grid, frequency, c_mps,
                beamformer=bf, loading=loading)
            stem = f"psf_az{source.azimuth_deg:g}_el{source.elevation_deg:g}_{bf}"
            beamforming.save_power_map_csv(pmap, out / f"{stem}.csv")
            beamforming.save_power_map_pgm(pmap, out / f"{stem}.pgm", metadata={
                "beamformer": bf,
                "source_azimuth_deg": f"{source.azimuth_deg:g}",
                "source_elevation_deg": f"{source.elevation_deg:g}",
                "frequency_hz": f"{frequency:g}",
            })
            _write_metrics(out / f"{stem}_metrics.txt", metrics)
            print(f"psf: wrote {stem} (peak sidelobe {metrics.peak_sidelobe_db:.1f} dB)")
    return 0


def cmd_scan(args, extra) -> int:
    cfg = build_config(args, extra)
    scene_path = cfg.get("scene.file")
    if not scene_path:
        raise ConfigError("scene.file", "a scene description file is required")
    try:
        scene, frequency, c_mps = load_scene_file(scene_path)
    except OSError as exc:
        raise ConfigError("scene.file", str(exc)) from None
    geometry = cfg.geometry()
    grid = cfg.grid()
    kind = cfg.get("beamformer.kind")
    if kind not in beamforming.BEAMFORMERS:
        raise ConfigError("beamformer.kind", f"unknown beamformer {kind!r}")
    loading = cfg.get_float("beamformer.loading")
    R = covariance_analytic(geometry, scene, frequency, c_mps)
    pmap = beamforming.power_map(geometry, R, grid, frequency, c_mps,
                                 beamformer=kind, loading=loading)
    out = _out_dir(args)
    beamforming.save_power_map_csv(pmap, out / "scan.csv")
    beamforming.save_power_map_pgm(pmap, out / "scan.pgm", metadata={
        "beamformer": kind, "frequency_hz": f"{frequency:g}"})
    peaks = beamforming.doa_peaks(pmap, max_peaks=5, min_separation_deg=5.0)
    with open(out / "scan_peaks.txt", "w") as fh:
        for direction, value in peaks:
            fh.write(f"{direction.azimuth_deg:.10g},{direction.elevation_deg:.10g},"
                     f"{value:.10g}\n")
    print(f"scan: wrote scan.csv/.pgm with {len(peaks)} peak(s)")
    return 0


def cmd_chirp(args, extra) -> int:
    cfg = build_config(args, extra)
    trace = generate_chirp(cfg.chirp_spec(), cfg.chirp_window())
    out = _out_dir(args)
    waveform.save_pcm(trace, out / "chirp.pcm")
    waveform.save_trace_csv(trace, out / "chirp.csv")
    print(f"chirp: wrote {len(trace)} samples at {trace.sample_rate_hz:g} Hz")
    return 0


def cmd_simulate(args, extra) -> int:
    cfg = build_config(args, extra)
    geometry = cfg.geometry()
    spec = cfg.chirp_spec()
    template = generate_chirp(spec, cfg.chirp_window())
    target = acquisition.ReflectorTarget(
        direction=Direction(cfg.get_float("simulate.azimuth_deg"),
                            cfg.get_float("simulate.elevation_deg")),
        range_m=cfg.get_float("simulate.range_m", positive=True),
        strength=cfg.get_float("simulate.strength", positive=True))
    duration = cfg.get_float("simulate.duration_s")
    rate = cfg.get_float("simulate.rate_hz", positive=True)
    noise_db = cfg.get_float("simulate.noise_db")
    channel = cfg.get_int("simulate.channel", minimum=0)
    c_mps = cfg.get_float("c_mps", positive=True)
    seed = cfg.get_int("seed", minimum=0)
    if channel >= geometry.n_elements:
        raise ConfigError("simulate.channel", "channel index beyond the array")
    n_pings = int(duration * rate + 1e-9)
    window_s = 1.0 / rate
    out = _out_dir(args)
    waveform.save_trace_csv(template, out / "transmit.csv")
    rows = []
    for ping in range(n_pings):
        capture = acquisition.synthesize_capture(
            geometry, target, template, noise_db, c_mps,
            rng_seed=seed + 64 * ping, window_s=window_s)
        trace = capture.channels[channel]
        if ping == 0:
            waveform.save_trace_csv(trace, out / "received.csv")
        mf = waveform.matched_filter(trace, template)
        try:
            est = waveform.estimate_range(mf, capture.emission_marker, c_mps,
                                          template_length=len(template))
            rows.append((ping, ping / rate, est.delay_s,
                         est.delay_s - spec.duration_s, est.range_m,
                         est.peak_value, est.peak_to_noise_db))
        except SonarrayError as exc:
            print(f"simulate: ping {ping}: {exc}", file=sys.stderr)
            rows.append((ping, ping / rate, float("nan"), float("nan"),
                         float("nan"), float("nan"), float("nan")))
    with open(out / "ranges.csv", "w", newline="") as fh:
        fh.write("ping,emission_time_s,delay_s,delay_from_sweep_end_s,"
                 "range_m,peak_value,peak_to_noise_db\n")
        for row in rows:
            fh.write(f"{row[0]},{row[1]:.6f},{row[2]:.9f},{row[3]:.9f},"
                     f"{row[4]:.6f},{row[5]:.6g},{row[6]:.2f}\n")
    print(f"simulate: {n_pings} ping(s) written to ranges.csv")
    return 0


def cmd_decode(args, extra) -> int:
    cfg = build_config(args, extra)
    rate = cfg.get_float("decode.rate_hz", positive=True)
    decimate = cfg.get_bool("decode.decimate")
    factor = cfg.get_int("decode.factor", minimum=2)
    if args.input == "-":
        stream = sys.stdin.buffer
        close = False
    else:
        try:
            stream = open(args.input, "rb")
        except OSError as exc:
            print(f"decode: cannot read input: {exc}", file=sys.stderr)
            return 2
        close = True
    parser = framing.StreamParser()
    channel_bits: dict = {}
    event_counts: dict = {}
    try:
        while True:
            chunk = stream.read(65536)
            if not chunk:
                break
            for event in parser.feed(chunk):
                if isinstance(event, framing.Frame):
                    bits = event.channel_bits()
                    for ch in range(event.channel_count):
                        channel_bits.setdefault(ch, []).append(bits[ch])
                else:
                    event_counts[event.kind] = event_counts.get(event.kind, 0) + 1
    finally:
        if close:
            stream.close()
    out = _out_dir(args)
    stats = parser.stats
    for ch in sorted(channel_bits):
        bits = np.concatenate(channel_bits[ch])
        pdm = acquisition.PdmStream(data=np.packbits(bits).tobytes(),
                                    n_bits=bits.size, rate_hz=rate, channel=ch)
        acquisition.save_pdm(pdm, out / f"ch{ch:02d}.pdm")
        if decimate:
            try:
                pcm = acquisition.pdm_decimate(pdm, factor)
            except ValueError as exc:
                print(f"decode: channel {ch}: {exc}", file=sys.stderr)
                return 3
            waveform.save_pcm(pcm, out / f"ch{ch:02d}.pcm")
    summary = (f"frames_ok={stats.frames_ok} frames_lost={stats.frames_lost} "
               f"resyncs={stats.resyncs} bytes_discarded={stats.bytes_discarded}")
    for kind in sorted(event_counts):
        summary += f" {kind}={event_counts[kind]}"
    print(summary)
    return 0


def cmd_bench(args, extra) -> int:
    cfg = build_config(args, extra)
    payload = cfg.get_int("bench.payload_kib", minimum=1) * 1024
    duration = cfg.get_float("bench.duration_s", positive=True)
    result = framing.stream_throughput_bench(payload, duration)
    aggregate = acquisition.aggregate_pdm_rate_bps()
    print(f"parser: {result.bytes_per_s / 1e6:.1f} MB/s "
          f"({result.megabits_per_s:.1f} Mb/s, {result.frames_per_s:.0f} frames/s)")
    print(f"config: aggregate PDM {aggregate / 1e6:.1f} Mb/s "
          f"< link budget {acquisition.USB_LINK_BUDGET_BPS / 1e6:.0f} Mb/s: "
          f"{'OK' if aggregate < acquisition.USB_LINK_BUDGET_BPS else 'VIOLATED'}")

    n = cfg.get_int("bench.sdm_samples", minimum=1000)
    t = np.arange(n) / acquisition.PDM_RATE_HZ
    tone = 0.5 * np.sin(2 * np.pi * 40_000.0 * t)
    dither = np.random.default_rng(0).uniform(-1e-3, 1e-3, n)
    out = np.empty(n, dtype=np.uint8)
    timings = {}
    for name, func in sorted(available_backends().items()):
        best = float("inf")
        for _ in range(3):
            start = time.perf_counter()
            func(tone, dither, acquisition.SDM_CLIP1, acquisition.SDM_CLIP2, out)
            best = min(best, time.perf_counter() - start)
        timings[name] = best
        print(f"sigma-delta [{name}]: {n / best / 1e6:.2f} Msamples/s "
              f"({best * 1e3:.1f} ms for {n} samples)")
    if "compiled" in timings and "pure" in timings:
        print(f"sigma-delta speedup: {timings['pure'] / timings['compiled']:.1f}x "
              f"(active backend: {BACKEND})")
    else:
        print(f"sigma-delta active backend: {BACKEND}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sonarray",
        description="Circular-array sonar bench: beamforming, chirp ranging, "
                    "PDM acquisition emulation, and frame-stream decoding.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key-value config file")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("psf", parents=[common],
                   help="point-source response maps and lobe metrics")
    sub.add_parser("scan", parents=[common], help="power-map scan of a scene file")
    sub.add_parser("chirp", parents=[common], help="emit the probe waveform")
    sub.add_parser("simulate", parents=[common],
                   help="ping/echo ranging experiment against a reflector")
    decode = sub.add_parser("decode", parents=[common],
                            help="decode a frame stream into per-channel PDM")
    decode.add_argument("input", help="frame stream file, or - for stdin")
    sub.add_parser("bench", parents=[common],
                   help="parser throughput and sigma-delta backend comparison")

    args, unknown = parser.parse_known_args(argv)
    extra = []
    for item in unknown:
        if item.startswith("--") and "=" in item:
            extra.append(item[2:])
        else:
            print(f"unrecognized argument: {item}", file=sys.stderr)
            return 2

    handlers = {
        "psf": cmd_psf,
        "scan": cmd_scan,
        "chirp": cmd_chirp,
        "simulate": cmd_simulate,
        "decode": cmd_decode,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args, extra)
    except ConfigError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 2
    except SonarrayError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
