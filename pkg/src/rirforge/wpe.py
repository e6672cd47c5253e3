"""Single-channel Weighted Prediction Error (WPE) dereverberation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import istft, stft

REFERENCE_RATE = 16000.0
RIDGE = 1e-8


class WpeError(ValueError):
    pass


@dataclass(frozen=True)
class WpeConfig:
    """STFT sizes are given at 16 kHz and scaled with the sample rate."""

    stft_window: int = 512
    stft_hop: int = 128
    delay: int = 3
    taps: int = 10
    iterations: int = 3
    floor: float = 1e-6

    def __post_init__(self):
        if self.delay < 1 or self.taps < 1 or self.iterations < 1:
            raise ValueError("delay, taps and iterations must all be >= 1")
        if not 0 < self.stft_hop <= self.stft_window:
            raise ValueError("need 0 < stft_hop <= stft_window")

    def sizes(self, rate: float) -> tuple[int, int]:
        scale = rate / REFERENCE_RATE
        return max(2, int(round(self.stft_window * scale))), max(1, int(round(self.stft_hop * scale)))


def _delayed_taps(Y: np.ndarray, delay: int, taps: int) -> np.ndarray:
    """Stack of past frames: ``out[f, t, k] = Y[f, t - delay - k]`` (zero before the start)."""
    F, T = Y.shape
    out = np.zeros((F, T, taps), dtype=Y.dtype)
    for k in range(taps):
        lag = delay + k
        if lag < T:
            out[:, lag:, k] = Y[:, : T - lag]
    return out


def wpe_stft(Y: np.ndarray, cfg: WpeConfig | None = None) -> np.ndarray:
    """Dereverberate an STFT of shape ``(bins, frames)``; all bins are solved in one batch."""
    cfg = cfg or WpeConfig()
    power = np.abs(Y) ** 2
    floor = cfg.floor * power.mean()
    if floor == 0:
        return Y.copy()
    X = _delayed_taps(Y, cfg.delay, cfg.taps)
    D = Y
    for _ in range(cfg.iterations):
        weight = 1.0 / np.maximum(np.abs(D) ** 2, floor)
        Xw = X * weight[:, :, None]
        R = np.einsum("ftk,ftj->fkj", Xw, X.conj())
        r = np.einsum("ftk,ft->fk", Xw, Y.conj())
        trace = np.real(np.trace(R, axis1=1, axis2=2))
        R = R + (RIDGE * trace)[:, None, None] * np.eye(cfg.taps)
        try:
            G = np.linalg.solve(R, r[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise WpeError("prediction normal equations are singular") from exc
        D = Y - np.einsum("ftk,fk->ft", X, G.conj())
    return D


def wpe(signal, rate: float, cfg: WpeConfig | None = None) -> np.ndarray:
    """Dereverberated copy of ``signal``, same length as the input."""
    cfg = cfg or WpeConfig()
    x = np.asarray(signal, dtype=np.float64)
    win, hop = cfg.sizes(rate)
    min_frames = cfg.delay + cfg.taps + 1
    if x.size < win + (min_frames - 1) * hop:
        raise WpeError(f"signal too short for WPE: need at least {min_frames} STFT frames")
    if not np.any(x):
        return np.zeros_like(x)
    _, _, Y = stft(x, fs=rate, window="hann", nperseg=win, noverlap=win - hop)
    D = wpe_stft(Y, cfg)
    _, y = istft(D, fs=rate, window="hann", nperseg=win, noverlap=win - hop)
    out = np.zeros_like(x)
    m = min(x.size, y.size)
    out[:m] = y[:m]
    return out
