"""Linear-phase FIR filters shared by the geometric solver and the crossover."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from .scene import OCTAVE_BANDS


def windowed_sinc_lowpass(cutoff: float, rate: float, numtaps: int) -> np.ndarray:
    """Hann-windowed sinc low-pass with unit DC gain; ``numtaps`` must be odd."""
    if numtaps % 2 == 0:
        raise ValueError("numtaps must be odd")
    if not 0 < cutoff < rate / 2:
        raise ValueError(f"cutoff {cutoff} Hz must lie in (0, {rate / 2})")
    m = np.arange(numtaps) - (numtaps - 1) / 2
    fc = cutoff / rate
    h = 2 * fc * np.sinc(2 * fc * m)
    h *= np.hanning(numtaps + 2)[1:-1]
    return h / h.sum()


def complement(lowpass: np.ndarray) -> np.ndarray:
    """High-pass that sums with ``lowpass`` to a pure delay of (N-1)/2 samples."""
    hp = -lowpass.copy()
    hp[(lowpass.size - 1) // 2] += 1.0
    return hp


@lru_cache(maxsize=16)
def _octave_bank(rate: float, numtaps: int) -> tuple[np.ndarray, ...]:
    edges = [f * np.sqrt(2.0) for f in OCTAVE_BANDS[:-1]]
    lowpasses = [windowed_sinc_lowpass(e, rate, numtaps) if e < rate / 2 else None for e in edges]
    delta = np.zeros(numtaps)
    delta[(numtaps - 1) // 2] = 1.0
    bands = []
    prev = np.zeros(numtaps)
    for lp in lowpasses:
        cur = delta if lp is None else lp
        bands.append(cur - prev)
        prev = cur
    bands.append(delta - prev)
    return tuple(bands)


def octave_filter_bank(rate: float, numtaps: int = 1023) -> np.ndarray:
    """Six octave-band FIR filters (125 Hz ... 4 kHz) that sum exactly to a delayed unit impulse.

    The lowest band is a low-pass, the highest a high-pass, so together they
    cover 0 Hz to Nyquist. Returns an array of shape ``(6, numtaps)``.
    """
    return np.array(_octave_bank(float(rate), int(numtaps)))


def filter_bands(band_signals: np.ndarray, rate: float, numtaps: int = 1023) -> np.ndarray:
    """Filter each row of ``band_signals`` with its octave band and sum, zero-phase.

    The output has the same length as the input rows; the filter delay is
    removed so an impulse stays at its original sample.
    """
    bank = octave_filter_bank(rate, numtaps)
    n = band_signals.shape[1]
    half = (numtaps - 1) // 2
    # the bank sums to an impulse, so the band-common part passes through untouched
    common = band_signals[0]
    out = np.array(common, dtype=float)
    for sig, taps in zip(band_signals, bank):
        diff = sig - common
        if not np.any(diff):
            continue
        out += fftconvolve(diff, taps)[half : half + n]
    return out
