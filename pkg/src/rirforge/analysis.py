"""RIR and signal analysis: decay times, DRR, low-band energy, spectra, correlation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks, get_window

from .rir import ImpulseResponse

LPS_EPS = 1e-10


class AnalysisError(ValueError):
    pass


@dataclass
class AcousticReport:
    t60: float
    estimation_method: str
    edt: float
    drr: float
    band_energy_fraction: dict[float, float] = field(default_factory=dict)
    mode_peaks: list[float] = field(default_factory=list)

    def __post_init__(self):
        for cutoff, frac in self.band_energy_fraction.items():
            if not math.isnan(frac) and not 0.0 <= frac <= 1.0 + 1e-12:
                raise ValueError(f"band energy fraction at {cutoff} Hz outside [0, 1]: {frac}")


@dataclass
class LogPowerSpectrogram:
    values: np.ndarray  # (frames, bins)
    frame_hop: int
    window_size: int
    sample_rate: float
    floor: float = math.log(LPS_EPS)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def frequencies(self) -> np.ndarray:
        return np.fft.rfftfreq(self.window_size, 1.0 / self.sample_rate)


def _samples(rir) -> tuple[np.ndarray, float | None]:
    if isinstance(rir, ImpulseResponse):
        return rir.samples, rir.sample_rate
    return np.asarray(rir, dtype=np.float64), None


def schroeder_curve(h: np.ndarray) -> np.ndarray:
    """Backward-integrated energy ``EDC[t] = sum_{tau >= t} h[tau]^2``."""
    return np.cumsum((np.asarray(h, dtype=np.float64) ** 2)[::-1])[::-1]


def noise_floor(h: np.ndarray) -> float:
    """Mean energy of the final 10 % of samples."""
    tail = max(1, h.size // 10)
    return float(np.mean(h[-tail:] ** 2))


def _truncation_index(h: np.ndarray, rate: float) -> int:
    """Sample where the smoothed energy envelope first sinks to the noise floor."""
    floor = noise_floor(h)
    if floor <= 0:
        return h.size
    win = max(1, int(round(0.01 * rate)))
    env = np.convolve(h**2, np.ones(win) / win, mode="same")
    start = int(np.argmax(np.abs(h)))
    below = np.nonzero(env[start:] <= floor)[0]
    return h.size if below.size == 0 else start + int(below[0])


def _decay_fit(edc_db: np.ndarray, rate: float, top: float, bottom: float) -> float | None:
    idx = np.nonzero((edc_db <= top) & (edc_db >= bottom))[0]
    if idx.size < 3 or edc_db.min() > bottom:
        return None
    # stay on the first contiguous passage through the range
    first = idx[0]
    last = first + np.argmax(edc_db[first:] < bottom) - 1
    idx = np.arange(first, max(last, first + 2) + 1)
    t = idx / rate
    slope = np.polyfit(t, edc_db[idx], 1)[0]
    if slope >= 0:
        return None
    return -60.0 / slope


def _edc_db(h: np.ndarray, rate: float) -> np.ndarray:
    cut = _truncation_index(h, rate)
    edc = schroeder_curve(h[:cut])
    if edc[0] <= 0:
        raise AnalysisError("insufficient decay: silent impulse response")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


def estimate_t60(rir, rate: float | None = None, method: str = "auto") -> tuple[float, str]:
    """Reverberation time from the Schroeder decay curve.

    ``t20`` fits the -5...-25 dB span, ``t30`` the -5...-35 dB span, each
    extrapolated to 60 dB. ``auto`` uses T20. The curve is computed up to the
    point where the smoothed energy meets the noise floor (mean energy of the
    final 10 % of samples).
    """
    h, r = _samples(rir)
    rate = rate or r
    if rate is None:
        raise ValueError("sample rate required")
    if h.size < 0.01 * rate:
        raise AnalysisError("impulse response shorter than 10 ms")
    edc_db = _edc_db(h, rate)
    spans = {"t20": (-5.0, -25.0), "t30": (-5.0, -35.0)}
    order = ["t20"] if method == "auto" else [method]
    if method not in ("auto", "t20", "t30"):
        raise ValueError(f"unknown T60 method {method!r}")
    for name in order:
        t60 = _decay_fit(edc_db, rate, *spans[name])
        if t60 is not None:
            return t60, name
    raise AnalysisError("insufficient decay to estimate T60")


def estimate_edt(rir, rate: float | None = None) -> float:
    """Early decay time from the 0...-10 dB span of the decay curve."""
    h, r = _samples(rir)
    rate = rate or r
    t = _decay_fit(_edc_db(h, rate), rate, 0.0, -10.0)
    if t is None:
        raise AnalysisError("insufficient decay to estimate EDT")
    return t


def drr(rir, rate: float | None = None, window: float = 0.0025) -> float:
    """Direct-to-reverberant ratio in dB; ``inf`` if nothing follows the direct sound."""
    h, r = _samples(rir)
    rate = rate or r
    e = h**2
    peak = int(np.argmax(e))
    if e[peak] == 0 or e[peak] < 100.0 * noise_floor(h):
        raise AnalysisError("no detectable direct arrival")
    half = int(round(window * rate))
    lo, hi = max(0, peak - half), min(h.size, peak + half + 1)
    direct = float(np.sum(e[lo:hi]))
    rest = float(np.sum(e) - direct)
    if rest <= 0:
        return math.inf
    return 10.0 * math.log10(direct / rest)


def _power_spectrum(signal, rate: float):
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise AnalysisError("signal must be non-empty and finite")
    power = np.abs(np.fft.rfft(x)) ** 2
    # one-sided spectrum: interior bins stand for both signs of frequency
    weights = np.full(power.size, 2.0)
    weights[0] = 1.0
    if x.size % 2 == 0:
        weights[-1] = 1.0
    power *= weights
    total = power.sum()
    if total <= 0:
        raise AnalysisError("all-zero signal has no energy distribution")
    return np.fft.rfftfreq(x.size, 1.0 / rate), power, total


def band_energy_fraction(signal, rate: float, cutoff: float = 250.0) -> float:
    """Fraction of signal energy at frequencies up to ``cutoff``."""
    if not 0 < cutoff <= rate / 2:
        raise ValueError(f"cutoff must lie in (0, {rate / 2}] Hz")
    f, power, total = _power_spectrum(signal, rate)
    return float(power[f <= cutoff].sum() / total)


def cumulative_energy_curve(signal, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative fraction of signal energy against frequency, ending at 1."""
    f, power, total = _power_spectrum(signal, rate)
    curve = np.cumsum(power) / total
    curve[-1] = 1.0
    return f, curve


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length sequences of at least 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ValueError("pearson is undefined for zero-variance input")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def log_power_spectrogram(signal, rate: float, window: int = 512, hop: int = 128) -> LogPowerSpectrogram:
    """Per-frame ``log(|STFT|^2 + eps)`` with a Hann window and no padding."""
    x = np.asarray(signal, dtype=np.float64)
    if not (window >= hop > 0):
        raise ValueError("need window >= hop > 0")
    if x.size < window:
        raise AnalysisError("signal shorter than one analysis window")
    n_frames = 1 + (x.size - window) // hop
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * get_window("hann", window)
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    return LogPowerSpectrogram(np.log(spec + LPS_EPS), hop, window, rate)


def mode_peaks(rir, rate: float | None = None, f_max: float = 300.0, prominence_db: float = 6.0) -> list[float]:
    """Frequencies of prominent low-frequency peaks in the RIR magnitude spectrum."""
    h, r = _samples(rir)
    rate = rate or r
    nfft = 1 << int(math.ceil(math.log2(max(h.size, int(rate)) * 4)))
    mag = np.abs(np.fft.rfft(h, nfft))
    f = np.fft.rfftfreq(nfft, 1.0 / rate)
    band = (f > 0) & (f <= f_max)
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag[band] + 1e-300)
    peaks, _ = find_peaks(db, prominence=prominence_db)
    return [float(v) for v in f[band][peaks]]


def analyze(rir: ImpulseResponse, cutoffs=(250.0,)) -> AcousticReport:
    """Collect T60, EDT, DRR and low-band energy fractions for one RIR.

    Quantities that cannot be estimated are reported as ``nan``.
    """
    h, rate = rir.samples, rir.sample_rate
    try:
        t60, method = estimate_t60(rir)
    except AnalysisError:
        t60, method = math.nan, "none"
    try:
        edt = estimate_edt(rir)
    except AnalysisError:
        edt = math.nan
    try:
        d = drr(rir)
    except AnalysisError:
        d = math.nan
    fractions = {}
    for c in cutoffs:
        try:
            fractions[c] = band_energy_fraction(h, rate, c)
        except AnalysisError:
            fractions[c] = math.nan
    return AcousticReport(t60, method, edt, d, fractions, mode_peaks(rir))


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation, ignoring ``nan`` entries."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), std


def format_mean_std(values, places: int = 4) -> str:
    m, s = mean_std(values)
    return f"{m:.{places}f}+/-{s:.{places}f}"
