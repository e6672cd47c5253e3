"""Impulse response container and WAV/sidecar file handling."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

logger = logging.getLogger(__name__)

METHODS = ("fdtd", "geometric", "hybrid", "measured")


@dataclass
class ImpulseResponse:
    samples: np.ndarray
    sample_rate: float
    method: str = "measured"
    scene_digest: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("impulse response must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("impulse response contains non-finite samples")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def resampled(self, rate: float) -> "ImpulseResponse":
        if rate == self.sample_rate:
            return self
        return ImpulseResponse(
            resample(self.samples, self.sample_rate, rate),
            rate,
            self.method,
            self.scene_digest,
            dict(self.metadata),
        )

    def sidecar(self) -> dict:
        return {
            "method": self.method,
            "sample_rate": self.sample_rate,
            "scene_digest": self.scene_digest,
            "num_samples": int(self.samples.size),
            "metadata": self.metadata,
        }


def resample(x: np.ndarray, rate_in: float, rate_out: float, max_denominator: int = 1000) -> np.ndarray:
    """Polyphase anti-aliased resampling between two rates."""
    if rate_in == rate_out:
        return np.asarray(x, dtype=np.float64)
    ratio = Fraction(rate_out / rate_in).limit_denominator(max_denominator)
    return resample_poly(np.asarray(x, dtype=np.float64), ratio.numerator, ratio.denominator)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64 in [-1, 1]; multichannel files are averaged to mono."""
    try:
        rate, data = wavfile.read(str(path))
    except (struct.error, EOFError) as exc:
        # scipy lets these escape for truncated headers
        raise ValueError(f"{path}: truncated or corrupt WAV file") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim > 1:
        x = x.mean(axis=1)
    return x, int(rate)


def write_wav(path, samples: np.ndarray, rate: int, fmt: str = "float32") -> None:
    """Write mono audio as 32-bit float or 16-bit PCM."""
    x = np.asarray(samples, dtype=np.float64)
    if fmt == "float32":
        data = x.astype(np.float32)
    elif fmt == "pcm16":
        if np.max(np.abs(x), initial=0.0) > 1.0:
            logger.warning("clipping %s to [-1, 1] for 16-bit export", path)
        data = np.round(np.clip(x, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    else:
        raise ValueError(f"unknown audio format {fmt!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), int(rate), data)


def sidecar_path(wav_path) -> Path:
    p = Path(wav_path)
    return p.with_name(p.name + ".json")


def save_rir(rir: ImpulseResponse, path) -> Path:
    """Write the RIR as float32 WAV plus a ``<name>.wav.json`` sidecar."""
    rate = rir.sample_rate
    if rate != int(rate):
        raise ValueError("WAV export needs an integer sample rate")
    write_wav(path, rir.samples, int(rate), "float32")
    side = sidecar_path(path)
    side.write_text(json.dumps(rir.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return side


def load_rir(path) -> ImpulseResponse:
    """Load a RIR WAV, picking up method/digest/metadata from its sidecar if present."""
    samples, rate = read_wav(path)
    side = sidecar_path(path)
    method, digest, meta = "measured", "", {}
    if side.exists():
        doc = json.loads(side.read_text(encoding="utf-8"))
        method = doc.get("method", method)
        digest = doc.get("scene_digest", digest)
        meta = doc.get("metadata", {})
    return ImpulseResponse(samples, rate, method, digest, meta)
