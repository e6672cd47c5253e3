"""Speech-to-reverberation modulation energy ratio (SRMR).

Pipeline: gammatone filterbank -> Hilbert envelope per acoustic band ->
modulation filterbank on each envelope -> framed energies averaged over time.
The score is the energy in the low modulation bands divided by the energy in
the high modulation bands; reverberation fills the gaps between syllables and
pushes envelope energy toward faster modulations, lowering the score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import gammatone, get_window, hilbert, sosfilt, tf2sos

# Glasberg & Moore ERB parameters as used in Slaney's auditory toolbox
EAR_Q = 9.26449
MIN_BW = 24.7


class SrmrError(ValueError):
    pass


@dataclass(frozen=True)
class SrmrConfig:
    acoustic_bands: int = 23
    low_freq: float = 125.0
    high_freq: float = 8000.0
    modulation_bands: int = 8
    min_modulation: float = 4.0
    max_modulation: float = 128.0
    modulation_q: float = 2.0
    window: float = 0.256
    hop: float = 0.064
    numerator_bands: tuple[int, ...] = (1, 2, 3, 4)
    denominator_bands: tuple[int, ...] = (5, 6, 7, 8)
    improved: bool = False
    dynamic_range_db: float = 30.0

    def __post_init__(self):
        num, den = set(self.numerator_bands), set(self.denominator_bands)
        if not num or not den:
            raise ValueError("numerator and denominator band sets must be nonempty")
        if num & den:
            raise ValueError("numerator and denominator band sets must be disjoint")
        if not all(1 <= b <= self.modulation_bands for b in num | den):
            raise ValueError("band indices are 1-based and must not exceed modulation_bands")

    @property
    def modulation_centers(self) -> np.ndarray:
        hi = 30.0 if self.improved else self.max_modulation
        return np.geomspace(self.min_modulation, hi, self.modulation_bands)


def erb_space(low: float, high: float, n: int) -> np.ndarray:
    """``n`` ERB-spaced centre frequencies from ``low`` up to (not including) ``high``, ascending."""
    i = np.arange(1, n + 1)
    c = EAR_Q * MIN_BW
    cf = -c + np.exp(i * (np.log(low + c) - np.log(high + c)) / n) * (high + c)
    return cf[::-1]


@lru_cache(maxsize=8)
def _gammatone_bank(rate: float, n: int, low: float, high: float) -> tuple[np.ndarray, ...]:
    top = min(rate / 2.0, high)
    return tuple(tf2sos(*gammatone(f, "iir", fs=rate)) for f in erb_space(low, top, n))


def modulation_filter(center: float, q: float, rate: float) -> np.ndarray:
    """Second-order band-pass ``(s/Q) / (s^2 + s/Q + 1)`` mapped by the bilinear transform."""
    w0 = math.tan(math.pi * center / rate)
    b0 = w0 / q
    a0 = 1.0 + b0 + w0 * w0
    b = np.array([b0, 0.0, -b0]) / a0
    a = np.array([1.0, (2.0 * w0 * w0 - 2.0) / a0, (1.0 - b0 + w0 * w0) / a0])
    return np.concatenate([b, a])[None, :]


def modulation_energies(signal, rate: float, cfg: SrmrConfig | None = None) -> np.ndarray:
    """Frame-averaged modulation energy, shape ``(acoustic_bands, modulation_bands)``."""
    cfg = cfg or SrmrConfig()
    x = np.asarray(signal, dtype=np.float64)
    if rate < 8000:
        raise SrmrError("SRMR needs a sample rate of at least 8 kHz")
    if x.size < rate:
        raise SrmrError("SRMR needs at least 1 s of signal")
    win = int(round(cfg.window * rate))
    hop = int(round(cfg.hop * rate))
    n_frames = 1 + (x.size - win) // hop
    window = get_window("hamming", win)
    frame_idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    mod_filters = [modulation_filter(f, cfg.modulation_q, rate) for f in cfg.modulation_centers]

    energies = np.zeros((cfg.acoustic_bands, cfg.modulation_bands))
    for k, sos in enumerate(_gammatone_bank(float(rate), cfg.acoustic_bands, cfg.low_freq, cfg.high_freq)):
        env = np.abs(hilbert(sosfilt(sos, x)))
        for j, msos in enumerate(mod_filters):
            frames = sosfilt(msos, env)[frame_idx] * window
            e = np.sum(frames**2, axis=1)
            if cfg.improved:
                e = np.maximum(e, e.max() * 10.0 ** (-cfg.dynamic_range_db / 10.0))
            energies[k, j] = e.mean()
    return energies


def srmr(signal, rate: float, cfg: SrmrConfig | None = None) -> float:
    """SRMR score of ``signal``; higher means less reverberant."""
    cfg = cfg or SrmrConfig()
    energies = modulation_energies(signal, rate, cfg)
    num = energies[:, [b - 1 for b in cfg.numerator_bands]].sum()
    den = energies[:, [b - 1 for b in cfg.denominator_bands]].sum()
    peak = energies.max()
    if peak <= 0 or den < 1e-12 * peak:
        raise SrmrError("signal is silent in the high modulation bands")
    return float(num / den)
