"""Crossover merge of a low-band wave RIR with a full-band geometric RIR."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .bands import complement, windowed_sinc_lowpass
from .rir import ImpulseResponse

logger = logging.getLogger(__name__)

ALIGNMENTS = ("analytic_delay", "peak_match", "none")
CALIBRATIONS = ("direct_energy_match", "none")
DIRECT_WINDOW = 0.001
MIN_ARRIVAL_LEVEL = 10.0 ** (-80.0 / 20.0)
# calibration ignores content below this frequency (Hz): the geometric branch
# carries a sub-audio image-sum offset that the wave branch filters out
CALIBRATION_LOW_CUT = 100.0


class MergeError(ValueError):
    pass


@dataclass(frozen=True)
class CrossoverSpec:
    crossover_frequency: float = 1400.0
    filter_length: int = 511
    alignment: str = "analytic_delay"
    calibration: str = "direct_energy_match"

    def __post_init__(self):
        if not self.crossover_frequency > 0:
            raise ValueError("crossover_frequency must be positive")
        if self.filter_length < 3 or self.filter_length % 2 == 0:
            raise ValueError("filter_length must be odd and >= 3")
        if self.alignment not in ALIGNMENTS:
            raise ValueError(f"alignment must be one of {ALIGNMENTS}")
        if self.calibration not in CALIBRATIONS:
            raise ValueError(f"calibration must be one of {CALIBRATIONS}")

    @property
    def group_delay(self) -> int:
        return (self.filter_length - 1) // 2

    def filters(self, rate: float) -> tuple[np.ndarray, np.ndarray]:
        """Linear-phase low-pass and its exact complementary high-pass."""
        if self.crossover_frequency >= rate / 2:
            raise MergeError(
                f"crossover {self.crossover_frequency} Hz is not below Nyquist ({rate / 2} Hz)"
            )
        lp = windowed_sinc_lowpass(self.crossover_frequency, rate, self.filter_length)
        return lp, complement(lp)


@dataclass
class Alignment:
    shift: int
    gain: float
    wave_arrival: int
    geo_arrival: int


def _first_arrival(h: np.ndarray, rate: float) -> int:
    """Index of the first local peak reaching half the global maximum."""
    mag = np.abs(h)
    peak = mag.max()
    if peak < MIN_ARRIVAL_LEVEL:
        raise MergeError("no detectable direct arrival in the wave RIR (below -80 dBFS)")
    onset = int(np.argmax(mag >= 0.5 * peak))
    stop = min(h.size, onset + max(1, int(round(DIRECT_WINDOW * rate))))
    return onset + int(np.argmax(mag[onset:stop]))


def _shift(h: np.ndarray, shift: int) -> np.ndarray:
    out = np.zeros_like(h)
    if shift >= 0:
        out[shift:] = h[: h.size - shift]
    else:
        out[:shift] = h[-shift:]
    return out


def _calibration_filter(crossover: float, rate: float) -> np.ndarray:
    """Zero-phase band-pass from ``CALIBRATION_LOW_CUT`` to the crossover, odd length."""
    numtaps = 2 * int(math.ceil(2.0 * rate / CALIBRATION_LOW_CUT)) + 1
    taps = windowed_sinc_lowpass(crossover, rate, numtaps)
    if crossover > 2.0 * CALIBRATION_LOW_CUT:
        taps = taps - windowed_sinc_lowpass(CALIBRATION_LOW_CUT, rate, numtaps)
    return taps


def _window_energy(h: np.ndarray, center: int, half: int) -> float:
    lo, hi = max(0, center - half), min(h.size, center + half + 1)
    return float(np.sum(h[lo:hi] ** 2))


def _direct_distance(rir: ImpulseResponse, scene) -> tuple[float, float] | None:
    if scene is not None:
        return scene.distance, scene.speed_of_sound
    meta = rir.metadata
    if "direct_distance" in meta and "speed_of_sound" in meta:
        return float(meta["direct_distance"]), float(meta["speed_of_sound"])
    return None


def calibrate_and_align(
    wave_rir: ImpulseResponse,
    geo_rir: ImpulseResponse,
    scene=None,
    spec: CrossoverSpec | None = None,
) -> tuple[ImpulseResponse, Alignment]:
    """Shift and scale the wave branch to line up with the geometric branch.

    ``analytic_delay`` moves the first wave arrival to ``d / c`` (distance from
    ``scene`` or RIR metadata, falling back to ``peak_match`` with a warning
    when neither is available); ``peak_match`` lines up the two largest peaks.
    Calibration compares the energy of both branches, band-passed between
    ``CALIBRATION_LOW_CUT`` and the crossover, in a +/-1 ms window around
    their direct arrivals.
    """
    spec = spec or CrossoverSpec()
    rate = wave_rir.sample_rate
    w = wave_rir.samples
    g = geo_rir.samples
    mode = spec.alignment
    geo_arrival = int(np.argmax(np.abs(g)))
    if mode == "analytic_delay":
        info = _direct_distance(geo_rir, scene) or _direct_distance(wave_rir, None)
        if info is None:
            warnings.warn("no source/receiver distance available; using peak_match alignment")
            mode = "peak_match"
        else:
            geo_arrival = int(round(rate * info[0] / info[1]))

    if mode == "none":
        wave_arrival, shift = geo_arrival, 0
        if np.max(np.abs(w)) < MIN_ARRIVAL_LEVEL and spec.calibration != "none":
            raise MergeError("no detectable direct arrival in the wave RIR (below -80 dBFS)")
    elif mode == "peak_match":
        if np.max(np.abs(w)) < MIN_ARRIVAL_LEVEL:
            raise MergeError("no detectable direct arrival in the wave RIR (below -80 dBFS)")
        wave_arrival = int(np.argmax(np.abs(w)))
        shift = geo_arrival - wave_arrival
    else:
        wave_arrival = _first_arrival(w, rate)
        shift = geo_arrival - wave_arrival
    shifted = _shift(w, shift)

    gain = 1.0
    if spec.calibration == "direct_energy_match":
        spec.filters(rate)  # validates the crossover against Nyquist
        bp = _calibration_filter(spec.crossover_frequency, rate)
        half = int(round(DIRECT_WINDOW * rate))
        d = (bp.size - 1) // 2
        e_wave = _window_energy(fftconvolve(shifted, bp)[d : d + w.size], geo_arrival, half)
        e_geo = _window_energy(fftconvolve(g, bp)[d : d + g.size], geo_arrival, half)
        if e_wave <= 0:
            raise MergeError("wave RIR has no energy around the direct arrival")
        gain = math.sqrt(e_geo / e_wave) if e_geo > 0 else 1.0

    meta = dict(wave_rir.metadata)
    meta.update({"alignment_shift": shift, "calibration_gain": gain})
    aligned = ImpulseResponse(shifted * gain, rate, wave_rir.method, wave_rir.scene_digest, meta)
    return aligned, Alignment(shift, gain, wave_arrival, geo_arrival)


def merge(
    wave_rir: ImpulseResponse,
    geo_rir: ImpulseResponse,
    spec: CrossoverSpec | None = None,
    scene=None,
) -> ImpulseResponse:
    """Hybrid RIR: low-passed (aligned, calibrated) wave branch plus complementary high-passed geometric branch.

    The output is ``max(len) + filter_length - 1`` samples long and delayed by
    ``(filter_length - 1) / 2`` samples relative to the inputs.
    """
    spec = spec or CrossoverSpec()
    if wave_rir.sample_rate != geo_rir.sample_rate:
        raise MergeError(
            f"sample rate mismatch: wave {wave_rir.sample_rate} Hz vs geometric {geo_rir.sample_rate} Hz"
        )
    rate = wave_rir.sample_rate
    lp, hp = spec.filters(rate)
    if wave_rir.scene_digest != geo_rir.scene_digest:
        warnings.warn("wave and geometric RIRs come from different scenes")

    n = max(len(wave_rir), len(geo_rir))
    wave_rir = ImpulseResponse(np.pad(wave_rir.samples, (0, n - len(wave_rir))), rate, wave_rir.method, wave_rir.scene_digest, wave_rir.metadata)
    geo_rir = ImpulseResponse(np.pad(geo_rir.samples, (0, n - len(geo_rir))), rate, geo_rir.method, geo_rir.scene_digest, geo_rir.metadata)
    aligned, info = calibrate_and_align(wave_rir, geo_rir, scene, spec)

    out = fftconvolve(aligned.samples, lp) + fftconvolve(geo_rir.samples, hp)
    meta = {
        "parents": {"wave": wave_rir.scene_digest, "geometric": geo_rir.scene_digest},
        "crossover_frequency": spec.crossover_frequency,
        "filter_length": spec.filter_length,
        "group_delay_samples": spec.group_delay,
        "alignment": spec.alignment,
        "alignment_shift": info.shift,
        "calibration": spec.calibration,
        "calibration_gain": info.gain,
    }
    for key in ("source", "receiver", "direct_distance", "speed_of_sound"):
        if key in geo_rir.metadata:
            meta[key] = geo_rir.metadata[key]
    digest = geo_rir.scene_digest or wave_rir.scene_digest
    return ImpulseResponse(out, rate, "hybrid", digest, meta)


def simulate_hybrid(scene, fdtd_cfg=None, geo_cfg=None, spec: CrossoverSpec | None = None) -> ImpulseResponse:
    """Run both solvers on ``scene`` at a common output rate and merge them."""
    from .fdtd import FdtdConfig, simulate_wave
    from .geometric import GeoConfig, simulate_geometric

    spec = spec or CrossoverSpec()
    geo_cfg = geo_cfg or GeoConfig()
    fdtd_cfg = fdtd_cfg or FdtdConfig(output_rate=geo_cfg.output_rate)
    if fdtd_cfg.output_rate != geo_cfg.output_rate:
        raise MergeError("wave and geometric solvers must share an output rate")
    geo = simulate_geometric(scene, geo_cfg)
    wave = simulate_wave(scene, fdtd_cfg)
    return merge(wave, geo, spec, scene)
