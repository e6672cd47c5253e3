"""Room impulse response synthesis (wave, geometric, hybrid) and dereverberation dataset tools."""

__version__ = "0.1.0"

from .analysis import (
    AcousticReport,
    analyze,
    band_energy_fraction,
    cumulative_energy_curve,
    drr,
    estimate_edt,
    estimate_t60,
    log_power_spectrogram,
    pearson,
)
from .dataset import DatasetConfig, DatasetManifest, T60Histogram, build_dataset, convolve, make_splits, sample_matched
from .fdtd import FdtdConfig, SourceExcitation, simulate_wave
from .geometric import GeoConfig, simulate_geometric
from .hybrid import CrossoverSpec, merge, simulate_hybrid
from .rir import ImpulseResponse, load_rir, save_rir
from .scene import AxisAlignedBox, Scene, SurfaceMaterial, load_scene, parse_scene, serialize_scene
from .srmr import SrmrConfig, srmr
from .wpe import WpeConfig, wpe

__all__ = [
    "AcousticReport",
    "AxisAlignedBox",
    "CrossoverSpec",
    "DatasetConfig",
    "DatasetManifest",
    "FdtdConfig",
    "GeoConfig",
    "ImpulseResponse",
    "Scene",
    "SourceExcitation",
    "SrmrConfig",
    "SurfaceMaterial",
    "T60Histogram",
    "WpeConfig",
    "analyze",
    "band_energy_fraction",
    "build_dataset",
    "convolve",
    "cumulative_energy_curve",
    "drr",
    "estimate_edt",
    "estimate_t60",
    "load_rir",
    "load_scene",
    "log_power_spectrogram",
    "make_splits",
    "merge",
    "parse_scene",
    "pearson",
    "sample_matched",
    "save_rir",
    "serialize_scene",
    "simulate_geometric",
    "simulate_hybrid",
    "simulate_wave",
    "srmr",
    "wpe",
]
