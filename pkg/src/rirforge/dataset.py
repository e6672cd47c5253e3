"""Dataset generation: T60-matched RIR sampling, convolution, splits and manifests."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import oaconvolve

from .analysis import AnalysisError, estimate_t60
from .rir import ImpulseResponse, load_rir, read_wav, resample, write_wav

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
PEAK_LEVEL = 0.9
MIN_SPLIT_ITEMS = 10


class DatasetError(ValueError):
    pass


@dataclass
class T60Histogram:
    """Counts of T60 values in contiguous bins ``[i*w, (i+1)*w)`` starting at 0 s."""

    bin_width: float = 0.1
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        if np.any(self.counts < 0):
            raise ValueError("histogram counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def bin_of(self, t60: float) -> int:
        return int(math.floor(t60 / self.bin_width + 1e-9))

    @classmethod
    def from_values(cls, values, bin_width: float = 0.1) -> "T60Histogram":
        v = np.asarray(values, dtype=np.float64)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("T60 values must be finite and non-negative")
        idx = np.floor(v / bin_width + 1e-9).astype(np.int64)
        return cls(bin_width, np.bincount(idx, minlength=int(idx.max(initial=-1)) + 1))


def _largest_remainder(weights: np.ndarray, n: int) -> np.ndarray:
    exact = weights / weights.sum() * n
    quota = np.floor(exact).astype(np.int64)
    short = n - int(quota.sum())
    # stable sort keeps lower bins first among equal remainders
    order = np.argsort(-(exact - quota), kind="stable")
    quota[order[:short]] += 1
    return quota


def _redistribute(mass: np.ndarray, available: np.ndarray) -> np.ndarray:
    """Move target mass from bins without pool items to the nearest bins that have some.

    Equidistant neighbours on both sides share the mass in proportion to
    their pool counts.
    """
    out = np.where(available > 0, mass, 0.0).astype(np.float64)
    filled = np.nonzero(available > 0)[0]
    for b in np.nonzero((mass > 0) & (available == 0))[0]:
        dist = np.abs(filled - b)
        nearest = filled[dist == dist.min()]
        share = available[nearest] / available[nearest].sum()
        out[nearest] += mass[b] * share
    return out


def sample_matched(pool, target: T60Histogram, n: int, seed: int = 42) -> list:
    """Draw ``n`` RIR references from ``pool`` so their T60 histogram follows ``target``.

    ``pool`` is a sequence of ``(reference, t60)`` pairs. Per-bin quotas come
    from largest-remainder rounding of ``n`` times the target proportions.
    A bin draws without replacement when it holds enough pool items and with
    replacement otherwise. The result is shuffled and reproducible for a
    given seed.
    """
    pool = list(pool)
    if not pool:
        raise DatasetError("RIR pool is empty")
    if n < 1:
        raise DatasetError("n must be at least 1")
    if target.total <= 0:
        raise DatasetError("target histogram is empty")
    members: dict[int, list] = {}
    for ref, t60 in pool:
        if not (math.isfinite(t60) and t60 >= 0):
            continue
        members.setdefault(target.bin_of(t60), []).append(ref)
    if not members:
        raise DatasetError("no pool RIR has a finite T60")

    size = max(len(target.counts), max(members) + 1)
    mass = np.zeros(size)
    mass[: len(target.counts)] = target.counts
    available = np.zeros(size, dtype=np.int64)
    for b, refs in members.items():
        available[b] = len(refs)
    if not np.any((mass > 0) & (available > 0)):
        raise DatasetError("RIR pool does not overlap the target T60 distribution")

    quota = _largest_remainder(_redistribute(mass, available), n)
    rng = np.random.default_rng(seed)
    chosen = []
    for b in np.nonzero(quota)[0]:
        refs = members[int(b)]
        q = int(quota[b])
        replace = q > len(refs)
        chosen.extend(refs[i] for i in rng.choice(len(refs), size=q, replace=replace))
    return [chosen[i] for i in rng.permutation(len(chosen))]


def convolve(clean, rir, rate: float | None = None, allow_resample: bool = True) -> tuple[np.ndarray, float]:
    """Full linear convolution of clean speech with a RIR, peak-normalised to 0.9.

    ``rir`` may be an :class:`ImpulseResponse` (resampled to ``rate`` when the
    rates differ) or a plain array assumed to share the clean signal's rate.
    Returns ``(reverberant, gain)`` where ``reverberant = gain * (clean * rir)``.
    """
    x = np.asarray(clean, dtype=np.float64)
    if isinstance(rir, ImpulseResponse):
        h = rir.samples
        if rate is not None and rir.sample_rate != rate:
            if not allow_resample:
                raise DatasetError(f"RIR rate {rir.sample_rate} Hz differs from signal rate {rate} Hz")
            h = resample(h, rir.sample_rate, rate)
    else:
        h = np.asarray(rir, dtype=np.float64)
    if x.size == 0 or h.size == 0:
        raise DatasetError("clean signal and RIR must be non-empty")
    y = oaconvolve(x, h)
    peak = float(np.max(np.abs(y)))
    gain = PEAK_LEVEL / peak if peak > 0 else 1.0
    return y * gain, gain


def make_splits(items, ratio=(0.8, 0.1, 0.1), seed: int = 42) -> dict[str, list]:
    """Shuffled train/dev/test partition: dev and test get floor shares, train the rest."""
    items = list(items)
    if len(ratio) != 3 or any(r < 0 for r in ratio) or not math.isclose(sum(ratio), 1.0):
        raise ValueError("ratio must be three non-negative fractions summing to 1")
    n = len(items)
    n_dev = int(math.floor(n * ratio[1] + 1e-9))
    n_test = int(math.floor(n * ratio[2] + 1e-9))
    n_train = n - n_dev - n_test
    if min(n_train, n_dev, n_test) < 1:
        raise DatasetError(f"{n} items cannot fill every split with ratio {tuple(ratio)}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [items[i] for i in order]
    return {
        "train": shuffled[:n_train],
        "dev": shuffled[n_train : n_train + n_dev],
        "test": shuffled[n_train + n_dev :],
    }


@dataclass
class ManifestRecord:
    clean_path: str
    rir_path: str
    output_path: str
    split: str
    applied_gain: float
    rir_method: str
    t60: float | None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    root: Path
    skipped: int = 0

    def split_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(SPLITS, 0)
        for r in self.records:
            counts[r.split] += 1
        return counts

    def resolve(self, record: ManifestRecord) -> Path:
        return self.root / record.output_path

    def write(self, path) -> None:
        text = "".join(r.to_json() + "\n" for r in self.records)
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        records = [
            ManifestRecord(**json.loads(line))
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        return cls(records, path.parent)


@dataclass(frozen=True)
class DatasetConfig:
    pairing: str = "cross"
    pairs_per_clean: int = 1
    ratio: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 42
    workers: int = 1
    audio_format: str = "float32"
    allow_resample: bool = True

    def __post_init__(self):
        if self.pairing not in ("cross", "random"):
            raise ValueError("pairing must be 'cross' or 'random'")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.pairs_per_clean < 1:
            raise ValueError("pairs_per_clean must be >= 1")
        if self.audio_format not in ("float32", "pcm16"):
            raise ValueError("audio_format must be 'float32' or 'pcm16'")


def read_rir_list(rir_manifest) -> list[Path]:
    """RIR paths from a directory of WAVs or a JSONL file with a ``path`` (or ``rir_path``) field."""
    src = Path(rir_manifest)
    if src.is_dir():
        return sorted(p.resolve() for p in src.rglob("*.wav"))
    if not src.is_file():
        raise DatasetError(f"RIR manifest {src} does not exist")
    paths = []
    for n, line in enumerate(src.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        doc = json.loads(line)
        ref = doc.get("path", doc.get("rir_path"))
        if ref is None:
            raise DatasetError(f"{src}:{n}: record has no 'path' field")
        p = Path(ref)
        paths.append((p if p.is_absolute() else src.parent / p).resolve())
    return paths


def _load_rirs(paths):
    rirs = []
    skipped = 0
    for p in paths:
        try:
            rir = load_rir(p)
        except (OSError, ValueError) as exc:
            logger.warning("skipping unreadable RIR %s: %s", p, exc)
            skipped += 1
            continue
        try:
            t60 = estimate_t60(rir)[0]
        except AnalysisError:
            t60 = None
        rirs.append((p, rir, t60))
    return rirs, skipped


def _load_clean(paths):
    clean = []
    skipped = 0
    for p in paths:
        try:
            x, rate = read_wav(p)
        except (OSError, ValueError) as exc:
            logger.warning("skipping unreadable clean file %s: %s", p, exc)
            skipped += 1
            continue
        if x.size == 0:
            logger.warning("skipping empty clean file %s", p)
            skipped += 1
            continue
        clean.append((p, x, rate))
    return clean, skipped


def build_dataset(clean_dir, rir_manifest, out_dir, config: DatasetConfig | None = None) -> DatasetManifest:
    """Convolve clean speech with RIRs, write reverberant WAVs and ``manifest.jsonl``.

    Splits are assigned per RIR so that no RIR appears in more than one split;
    with fewer than ten RIRs everything goes to ``train``.
    """
    cfg = config or DatasetConfig()
    clean_dir, out_dir = Path(clean_dir), Path(out_dir)
    if not clean_dir.is_dir():
        raise DatasetError(f"clean directory {clean_dir} does not exist")
    clean, skipped_clean = _load_clean(sorted(p.resolve() for p in clean_dir.rglob("*.wav")))
    rirs, skipped_rir = _load_rirs(read_rir_list(rir_manifest))
    if not clean or not rirs:
        raise DatasetError("need at least one readable clean file and one readable RIR")

    if len(rirs) >= MIN_SPLIT_ITEMS:
        parts = make_splits(range(len(rirs)), cfg.ratio, cfg.seed)
        split_of = {i: name for name, idx in parts.items() for i in idx}
    else:
        logger.warning("only %d RIRs; assigning all of them to train", len(rirs))
        split_of = dict.fromkeys(range(len(rirs)), "train")

    if cfg.pairing == "cross":
        pairs = [(c, r) for c in range(len(clean)) for r in range(len(rirs))]
    else:
        rng = np.random.default_rng(cfg.seed)
        pairs = [(c, int(r)) for c in range(len(clean)) for r in rng.integers(0, len(rirs), cfg.pairs_per_clean)]

    def job(k: int) -> ManifestRecord:
        c, r = pairs[k]
        cpath, x, rate = clean[c]
        rpath, rir, t60 = rirs[r]
        y, gain = convolve(x, rir, rate, cfg.allow_resample)
        split = split_of[r]
        rel = Path(split) / f"{k:06d}_{cpath.stem}__{rpath.stem}.wav"
        write_wav(out_dir / rel, y, rate, cfg.audio_format)
        return ManifestRecord(str(cpath), str(rpath), rel.as_posix(), split, gain, rir.method, t60)

    out_dir.mkdir(parents=True, exist_ok=True)
    records, failed = [], 0
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(job, k) for k in range(len(pairs))]
        for k, fut in enumerate(futures):
            try:
                records.append(fut.result())
            except (OSError, ValueError) as exc:
                logger.warning("failed to generate pair %d: %s", k, exc)
                failed += 1
    manifest = DatasetManifest(records, out_dir, skipped_clean + skipped_rir + failed)
    manifest.write(out_dir / "manifest.jsonl")
    if manifest.skipped:
        logger.warning("%d inputs skipped or failed", manifest.skipped)
    logger.info("wrote %d records to %s", len(records), out_dir / "manifest.jsonl")
    return manifest
