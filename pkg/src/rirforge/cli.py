"""``rirforge`` command line: one subcommand per pipeline stage.

Every option can also be set through an environment variable named
``RIRFORGE_<OPTION>`` (upper case, dashes as underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import analyze, band_energy_fraction, cumulative_energy_curve, format_mean_std, pearson
from .dataset import DatasetConfig, T60Histogram, build_dataset, convolve, read_rir_list, sample_matched
from .fdtd import FdtdConfig, simulate_wave
from .geometric import GeoConfig, simulate_geometric
from .hybrid import ALIGNMENTS, CALIBRATIONS, CrossoverSpec, merge
from .rir import load_rir, read_wav, save_rir, write_wav
from .scene import load_scene
from .srmr import SrmrConfig, srmr
from .wpe import WpeConfig, wpe

logger = logging.getLogger("rirforge")
ENV_PREFIX = "RIRFORGE_"


def _fmt(x: float, places: int = 4) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.{places}f}"


def _env_default(parser: argparse.ArgumentParser) -> None:
    """Replace option defaults with ``RIRFORGE_*`` environment values where set."""
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help", "version"):
            continue
        name = ENV_PREFIX + action.dest.upper()
        if name not in os.environ:
            continue
        raw = os.environ[name]
        if isinstance(action, argparse._StoreTrueAction):
            action.default = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                action.default = action.type(raw)
            except (TypeError, ValueError):
                parser.error(f"invalid value {raw!r} in {name}")
        else:
            action.default = raw
        action.required = False


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    p.add_argument("--workers", type=_positive_int, default=1, help="worker threads")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return p


def _wave_options(p):
    g = p.add_argument_group("wave solver")
    g.add_argument("--max-frequency", type=float, default=1400.0)
    g.add_argument("--points-per-wavelength", type=float, default=10.0)
    g.add_argument("--wave-duration", type=float, default=0.5, help="FDTD simulated time in seconds")
    g.add_argument("--cell-cap", type=int, default=FdtdConfig().cell_cap)


def _geo_options(p):
    g = p.add_argument_group("geometric solver")
    g.add_argument("--ism-order", type=int, default=6)
    g.add_argument("--rays", type=int, default=20000)
    g.add_argument("--max-bounces", type=int, default=50)
    g.add_argument("--geo-duration", type=float, default=None, help="geometric RIR length in seconds")


def _crossover_options(p):
    g = p.add_argument_group("crossover")
    g.add_argument("--crossover", type=float, default=1400.0)
    g.add_argument("--filter-length", type=int, default=511)
    g.add_argument("--alignment", choices=ALIGNMENTS, default="analytic_delay")
    g.add_argument("--calibration", choices=CALIBRATIONS, default="direct_energy_match")


def _fdtd_cfg(a) -> FdtdConfig:
    return FdtdConfig(
        max_frequency=a.max_frequency,
        points_per_wavelength=a.points_per_wavelength,
        duration=a.wave_duration,
        output_rate=a.rate,
        cell_cap=a.cell_cap,
    )


def _geo_cfg(a) -> GeoConfig:
    return GeoConfig(
        ism_max_order=a.ism_order,
        ray_count=a.rays,
        max_ray_bounces=a.max_bounces,
        output_rate=a.rate,
        rng_seed=a.seed,
        duration=a.geo_duration,
    )


def _wav_inputs(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.rglob("*.wav")))
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(f"{p} does not exist")
    if not out:
        raise ValueError("no WAV files found")
    return out


def cmd_simulate_wave(a) -> int:
    rir = simulate_wave(load_scene(a.scene), _fdtd_cfg(a))
    save_rir(rir, a.out)
    logger.info("wrote %s", a.out)
    return 0


def cmd_simulate_geo(a) -> int:
    rir = simulate_geometric(load_scene(a.scene), _geo_cfg(a))
    save_rir(rir, a.out)
    logger.info("wrote %s", a.out)
    return 0


def cmd_simulate_hybrid(a) -> int:
    scene = load_scene(a.scene)
    geo = simulate_geometric(scene, _geo_cfg(a))
    wave = simulate_wave(scene, _fdtd_cfg(a))
    spec = CrossoverSpec(a.crossover, a.filter_length, a.alignment, a.calibration)
    rir = merge(wave, geo, spec, scene)
    save_rir(rir, a.out)
    if a.keep_branches:
        stem = Path(a.out)
        save_rir(wave, stem.with_name(stem.stem + "_wave.wav"))
        save_rir(geo, stem.with_name(stem.stem + "_geo.wav"))
    logger.info("wrote %s", a.out)
    return 0


def cmd_analyze(a) -> int:
    cutoffs = a.cutoff or [250.0]
    t60s = []
    for path in _wav_inputs(a.inputs):
        rep = analyze(load_rir(path), cutoffs)
        t60s.append(rep.t60)
        fields = [
            f"file={path}",
            f"t60={_fmt(rep.t60)}",
            f"method={rep.estimation_method}",
            f"edt={_fmt(rep.edt)}",
            f"drr={_fmt(rep.drr)}",
        ]
        fields += [f"fraction_below_{c:g}={_fmt(rep.band_energy_fraction[c])}" for c in cutoffs]
        print(" ".join(fields))
    print(f"t60 {format_mean_std(t60s)} n={sum(not math.isnan(t) for t in t60s)}")
    return 0


def cmd_energy_curve(a) -> int:
    x, rate = read_wav(a.input)
    f, curve = cumulative_energy_curve(x, rate)
    if a.max_points and f.size > a.max_points:
        idx = np.unique(np.linspace(0, f.size - 1, a.max_points).round().astype(int))
        f, curve = f[idx], curve[idx]
    lines = "".join(f"{fi:.4f} {ci:.4f}\n" for fi, ci in zip(f, curve))
    if a.out:
        Path(a.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    return 0


def cmd_srmr(a) -> int:
    cfg = SrmrConfig(improved=a.improved)
    scores = []
    for path in _wav_inputs(a.inputs):
        x, rate = read_wav(path)
        s = srmr(x, rate, cfg)
        scores.append(s)
        print(f"{path} {_fmt(s)}")
    print(f"mean {_fmt(float(np.mean(scores)))} n={len(scores)}")
    return 0


def cmd_wpe(a) -> int:
    x, rate = read_wav(a.input)
    cfg = WpeConfig(a.window, a.hop, a.delay, a.taps, a.iterations)
    write_wav(a.output, wpe(x, rate, cfg), rate, a.format)
    return 0


def _rir_t60_pool(source) -> list[tuple[str, float]]:
    """``(path, t60)`` pairs from a JSONL file with ``t60`` fields or from RIR WAVs."""
    src = Path(source)
    if src.is_file() and src.suffix != ".wav":
        pool = []
        for line in src.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            if doc.get("t60") is not None:
                pool.append((str(doc.get("path", doc.get("rir_path", ""))), float(doc["t60"])))
                continue
            ref = Path(doc.get("path", doc.get("rir_path")))
            pool.extend(_rir_t60_pool(ref if ref.is_absolute() else src.parent / ref))
        return pool
    from .analysis import AnalysisError, estimate_t60

    pool = []
    for p in [src] if src.is_file() else read_rir_list(src):
        try:
            pool.append((str(p), estimate_t60(load_rir(p))[0]))
        except AnalysisError as exc:
            logger.warning("no T60 for %s: %s", p, exc)
    return pool


def cmd_sample(a) -> int:
    pool = _rir_t60_pool(a.pool)
    target = T60Histogram.from_values([t for _, t in _rir_t60_pool(a.target)], a.bin_width)
    refs = sample_matched(pool, target, a.n, a.seed)
    t60 = dict(pool)
    text = "".join(json.dumps({"path": r, "t60": round(t60[r], 6)}, sort_keys=True) + "\n" for r in refs)
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_convolve(a) -> int:
    x, rate = read_wav(a.clean)
    y, gain = convolve(x, load_rir(a.rir), rate, allow_resample=not a.no_resample)
    write_wav(a.output, y, rate, a.format)
    print(f"gain {_fmt(gain, 6)}")
    return 0


def cmd_build_dataset(a) -> int:
    cfg = DatasetConfig(
        pairing=a.pairing,
        pairs_per_clean=a.pairs_per_clean,
        ratio=tuple(a.ratio),
        seed=a.seed,
        workers=a.workers,
        audio_format=a.format,
    )
    manifest = build_dataset(a.clean, a.rirs, a.out, cfg)
    counts = manifest.split_counts()
    print(" ".join(f"{k}={v}" for k, v in counts.items()) + f" skipped={manifest.skipped}")
    return 0


def _read_table(path, x_col: str, y_col: str) -> tuple[list[str], list[float], list[float]]:
    text = Path(path).read_text(encoding="utf-8")
    dialect = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",\t;")
    rows = list(csv.DictReader(text.splitlines(), dialect=dialect))
    if not rows:
        raise ValueError(f"{path} has no data rows")
    names, xs, ys = [], [], []
    for i, row in enumerate(rows):
        row = {k.strip(): v.strip() for k, v in row.items() if k is not None}
        if x_col not in row or y_col not in row:
            raise ValueError(f"{path} needs columns {x_col!r} and {y_col!r}")
        names.append(row.get("dataset", str(i + 1)))
        xs.append(float(row[x_col]))
        ys.append(float(row[y_col]))
    return names, xs, ys


def cmd_correlate(a) -> int:
    names, xs, ys = _read_table(a.table, a.x_column, a.y_column)
    print(f"dataset {a.x_column} {a.y_column}")
    for n, x, y in zip(names, xs, ys):
        print(f"{n} {_fmt(x)} {_fmt(y)}")
    print(f"r = {_fmt(pearson(xs, ys))}")
    return 0


def cmd_fraction(a) -> int:
    for path in _wav_inputs(a.inputs):
        x, rate = read_wav(path)
        print(f"{path} {_fmt(band_energy_fraction(x, rate, a.cutoff))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="rirforge", description="Room impulse response synthesis and dataset tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    for name, func, text in (
        ("simulate-wave", cmd_simulate_wave, "FDTD RIR of a scene"),
        ("simulate-geo", cmd_simulate_geo, "image-source + ray-traced RIR of a scene"),
        ("simulate-hybrid", cmd_simulate_hybrid, "run both solvers and merge at the crossover"),
    ):
        p = add(name, func, text)
        p.add_argument("--scene", required=True, help="scene JSON file")
        p.add_argument("--out", required=True, help="output WAV (a .wav.json sidecar is written next to it)")
        p.add_argument("--rate", type=float, default=48000.0, help="output sample rate")
        if name != "simulate-geo":
            _wave_options(p)
        if name != "simulate-wave":
            _geo_options(p)
        if name == "simulate-hybrid":
            _crossover_options(p)
            p.add_argument("--keep-branches", action="store_true", help="also write the wave and geometric RIRs")

    p = add("analyze", cmd_analyze, "T60/EDT/DRR/low-band report for RIR files or directories")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--cutoff", type=float, action="append", help="low-band cutoff in Hz (repeatable)")

    p = add("energy-curve", cmd_energy_curve, "cumulative energy vs frequency as two-column data")
    p.add_argument("input")
    p.add_argument("--out")
    p.add_argument("--max-points", type=int, default=0, help="decimate the curve to this many points")

    p = add("fraction", cmd_fraction, "fraction of signal energy below a cutoff")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--cutoff", type=float, default=250.0)

    p = add("srmr", cmd_srmr, "SRMR score per file and corpus mean")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--improved", action="store_true", help="use energy clipping and a 4-30 Hz modulation range")

    p = add("wpe", cmd_wpe, "WPE dereverberation of one WAV")
    p.add_argument("input")
    p.add_argument("output")
    d = WpeConfig()
    p.add_argument("--window", type=int, default=d.stft_window, help="STFT window at 16 kHz")
    p.add_argument("--hop", type=int, default=d.stft_hop, help="STFT hop at 16 kHz")
    p.add_argument("--delay", type=int, default=d.delay)
    p.add_argument("--taps", type=int, default=d.taps)
    p.add_argument("--iterations", type=int, default=d.iterations)
    p.add_argument("--format", choices=["float32", "pcm16"], default="float32")

    p = add("sample", cmd_sample, "draw RIRs whose T60 histogram matches a target set")
    p.add_argument("--pool", required=True, help="RIR directory or JSONL (path, optional t60)")
    p.add_argument("--target", required=True, help="RIR directory or JSONL defining the target T60s")
    p.add_argument("-n", type=_positive_int, required=True)
    p.add_argument("--bin-width", type=float, default=0.1)
    p.add_argument("--out", help="output JSONL (default stdout)")

    p = add("convolve", cmd_convolve, "convolve clean speech with a RIR, peak-normalised to 0.9")
    p.add_argument("clean")
    p.add_argument("rir")
    p.add_argument("output")
    p.add_argument("--no-resample", action="store_true", help="fail instead of resampling on rate mismatch")
    p.add_argument("--format", choices=["float32", "pcm16"], default="float32")

    p = add("build-dataset", cmd_build_dataset, "convolve a clean corpus with RIRs and write a manifest")
    p.add_argument("--clean", required=True, help="directory of clean WAVs")
    p.add_argument("--rirs", required=True, help="RIR directory or JSONL manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--pairing", choices=["cross", "random"], default="cross")
    p.add_argument("--pairs-per-clean", type=_positive_int, default=1)
    p.add_argument("--ratio", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    p.add_argument("--format", choices=["float32", "pcm16"], default="float32")

    p = add("correlate", cmd_correlate, "per-dataset table and Pearson r of two columns")
    p.add_argument("table", help="CSV/TSV with a header row")
    p.add_argument("--x-column", default="improvement")
    p.add_argument("--y-column", default="fraction")

    for action in sub.choices.values():
        _env_default(action)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # own handler so diagnostics reach stderr even when the root logger is already configured
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(args.log_level)
    logger.propagate = False
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
