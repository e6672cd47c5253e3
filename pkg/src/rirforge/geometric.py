"""Geometric room acoustics: image sources for specular paths, ray tracing for the rest.

The split avoids counting any path twice. The image-source lattice gives every
purely specular path up to ``ism_max_order`` reflections. The ray tracer only
registers energy carried by rays that have scattered at least once, or that
have already exceeded ``ism_max_order`` reflections.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .bands import filter_bands, octave_filter_bank
from .rir import ImpulseResponse
from .scene import N_BANDS, OCTAVE_BANDS, Scene, segment_intersects_box

logger = logging.getLogger(__name__)

# ISO 9613-1 style attenuation at 20 C / 50 % RH, dB per km, one value per octave band
AIR_ATTENUATION_DB_PER_KM = np.array([0.44, 1.31, 2.73, 4.66, 9.86, 29.4])


@dataclass(frozen=True)
class GeoConfig:
    ism_max_order: int = 6
    ray_count: int = 20000
    max_ray_bounces: int = 50
    energy_threshold: float = -60.0
    output_rate: float = 48000.0
    rng_seed: int = 42
    histogram_bin: float | None = None
    receiver_radius: float = 0.1
    duration: float | None = None
    band_filter_taps: int = 1023

    def __post_init__(self):
        if self.ism_max_order < 0:
            raise ValueError("ism_max_order must be >= 0")
        if self.ray_count < 0:
            raise ValueError("ray_count must be >= 0")
        if not self.output_rate > 0:
            raise ValueError("output_rate must be positive")
        if self.max_ray_bounces < 0:
            raise ValueError("max_ray_bounces must be >= 0")
        if not self.receiver_radius > 0:
            raise ValueError("receiver_radius must be positive")

    @property
    def bin_width(self) -> float:
        return self.histogram_bin if self.histogram_bin is not None else 32.0 / self.output_rate


@dataclass(frozen=True)
class ImageSource:
    position: tuple[float, float, float]
    order: int
    attenuation: np.ndarray  # pressure factor per octave band
    wall_hits: tuple[int, ...]  # reflections off each of the 6 walls


def _axis_images(src: float, length: float, max_order: int):
    """(coordinate, hits on the lower wall, hits on the upper wall) along one axis."""
    out = []
    for l in range(-max_order, max_order + 1):
        for u in (0, 1):
            lo, hi = abs(l - u), abs(l)
            if lo + hi <= max_order:
                out.append(((1 - 2 * u) * src + 2 * l * length, lo, hi))
    return out


def enumerate_images(scene: Scene, max_order: int) -> list[ImageSource]:
    """All shoebox image sources with at most ``max_order`` reflections.

    Obstacles are ignored here; occlusion is checked per path at synthesis.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    refl = np.array([m.reflection() for m in scene.surfaces])  # (6 walls, 6 bands)
    axes = [_axis_images(s, L, max_order) for s, L in zip(scene.source, scene.room_dims)]
    images = []
    for (x, x0, x1), (y, y0, y1), (z, z0, z1) in itertools.product(*axes):
        hits = (x0, x1, y0, y1, z0, z1)
        order = sum(hits)
        if order > max_order:
            continue
        att = np.prod(refl ** np.array(hits)[:, None], axis=0)
        images.append(ImageSource((x, y, z), order, att, hits))
    images.sort(key=lambda im: (im.order, im.position))
    return images


def fold_to_room(points: np.ndarray, dims) -> np.ndarray:
    """Map points of the mirrored image lattice back into the real room."""
    L = np.asarray(dims, dtype=float)
    q = np.mod(points, 2 * L)
    return np.where(q > L, 2 * L - q, q)


def image_path_visible(image_pos, receiver, scene: Scene) -> bool:
    """True if the specular path from an image source to the receiver misses all obstacles.

    The straight line from the image to the receiver is cut at every wall plane
    it crosses; folding each piece back into the room gives the real path legs.
    """
    if not scene.obstacles:
        return True
    a = np.asarray(image_pos, dtype=float)
    d = np.asarray(receiver, dtype=float) - a
    ts = [0.0, 1.0]
    for axis, L in enumerate(scene.room_dims):
        if d[axis] == 0:
            continue
        lo, hi = sorted((a[axis], a[axis] + d[axis]))
        for k in range(math.ceil(lo / L), math.floor(hi / L) + 1):
            t = (k * L - a[axis]) / d[axis]
            if 0.0 < t < 1.0:
                ts.append(t)
    ts = np.unique(ts)
    pts = fold_to_room(a[None, :] + ts[:, None] * d[None, :], scene.room_dims)
    for p0, p1 in zip(pts[:-1], pts[1:]):
        for box in scene.obstacles:
            if segment_intersects_box(p0, p1, box.min_corner, box.max_corner):
                return False
    return True


def _air_factor(distance, enabled: bool) -> np.ndarray:
    """Energy attenuation per band over ``distance`` metres."""
    if not enabled:
        return np.ones(np.shape(distance) + (N_BANDS,))
    return 10.0 ** (-AIR_ATTENUATION_DB_PER_KM * np.asarray(distance)[..., None] / 1e4)


@dataclass
class DiffuseHistogram:
    """Energy arriving at the receiver per octave band and time bin.

    Energies are in the same units as the squared samples of an impulse
    response, so ``energy[b].sum()`` estimates the band's share of ``sum(h**2)``.
    """

    bin_width: float
    energy: np.ndarray  # (6, n_bins)
    rays: int

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.energy.shape[1]) + 0.5) * self.bin_width

    def decay_slope(self, band: int, start: float = 0.0, stop: float | None = None) -> float:
        """Least-squares slope of the log-energy histogram in dB/s over nonzero bins."""
        t = self.times
        e = self.energy[band]
        mask = (e > 0) & (t >= start)
        if stop is not None:
            mask &= t <= stop
        if mask.sum() < 2:
            raise ValueError("not enough nonzero bins to fit a slope")
        return float(np.polyfit(t[mask], 10 * np.log10(e[mask]), 1)[0])

    def to_text(self) -> str:
        """Columnar dump: time followed by one energy column per band."""
        lines = ["# time_s " + " ".join(f"E_{int(f)}Hz" for f in OCTAVE_BANDS)]
        for t, row in zip(self.times, self.energy.T):
            lines.append(f"{t:.6f} " + " ".join(f"{v:.6e}" for v in row))
        return "\n".join(lines) + "\n"


def _materials(scene: Scene):
    mats = list(scene.surfaces) + list(scene.obstacle_materials)
    alpha = np.array([m.absorption for m in mats])
    scatter = np.array([m.scattering for m in mats])
    return alpha, scatter


def _random_directions(rng, n: int) -> np.ndarray:
    z = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2 * np.pi, n)
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _next_hit(pos, dirs, scene: Scene, eps: float = 1e-9):
    """Distance, surface index (0-5 walls, 6+ obstacles) and normal axis of the next hit."""
    n = pos.shape[0]
    dims = np.asarray(scene.room_dims)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_up = np.where(dirs > 0, (dims - pos) / dirs, np.inf)
        t_lo = np.where(dirs < 0, -pos / dirs, np.inf)
    t_axis = np.minimum(t_up, t_lo)
    t_axis = np.where(t_axis > eps, t_axis, np.inf)
    axis = np.argmin(t_axis, axis=1)
    t_hit = t_axis[np.arange(n), axis]
    upper = dirs[np.arange(n), axis] > 0
    surface = 2 * axis + upper
    for i, box in enumerate(scene.obstacles):
        lo = np.asarray(box.min_corner)
        hi = np.asarray(box.max_corner)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - pos) / dirs
            t2 = (hi - pos) / dirs
        tmin = np.where(dirs == 0, np.where((pos >= lo) & (pos <= hi), -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(dirs == 0, np.where((pos >= lo) & (pos <= hi), np.inf, -np.inf), np.maximum(t1, t2))
        t_near = tmin.max(axis=1)
        t_far = tmax.min(axis=1)
        hit = (t_near <= t_far) & (t_near > eps) & (t_near < t_hit)
        if np.any(hit):
            t_hit = np.where(hit, t_near, t_hit)
            axis = np.where(hit, np.argmax(tmin, axis=1), axis)
            surface = np.where(hit, 6 + i, surface)
    return t_hit, surface, axis


def trace_diffuse(scene: Scene, cfg: GeoConfig | None = None, diffuse_only: bool = False) -> DiffuseHistogram:
    """Monte Carlo energy histogram at the receiver.

    Every ray starts with ``1 / ray_count`` of the unit source energy in each
    band. At each reflection the band energies are multiplied by
    ``1 - absorption``; the new direction is specular with probability
    ``1 - s`` and Lambert-distributed otherwise, where ``s`` is the band-mean
    scattering coefficient (band energies are reweighted so each band sees its
    own scattering coefficient in expectation). The receiver is a sphere that
    registers ``energy * chord length`` for every ray passing through it.

    With ``diffuse_only`` set, only rays that have scattered at least once or
    have more than ``ism_max_order`` reflections are registered.
    """
    cfg = cfg or GeoConfig()
    if cfg.ray_count <= 0:
        raise ValueError("ray_count must be positive for ray tracing")
    rng = np.random.default_rng([cfg.rng_seed, 0])
    n = cfg.ray_count
    c = scene.speed_of_sound
    alpha, scatter = _materials(scene)
    s_mean = scatter.mean(axis=1)
    rcv = np.asarray(scene.receiver)
    radius = cfg.receiver_radius
    scale = 3.0 / (16.0 * np.pi**2 * radius**3)
    cutoff = 10.0 ** (cfg.energy_threshold / 10.0) / n

    pos = np.tile(np.asarray(scene.source, dtype=float), (n, 1))
    dirs = _random_directions(rng, n)
    energy = np.full((n, N_BANDS), 1.0 / n)
    travelled = np.zeros(n)
    order = np.zeros(n, dtype=np.int64)
    scattered = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)

    bins_out, energy_out = [], []
    rows = np.arange(n)
    for _ in range(cfg.max_ray_bounces + 1):
        # random numbers are drawn for every ray each bounce so paths do not depend on absorption
        u_scatter = rng.uniform(size=n)
        u_r = rng.uniform(size=n)
        u_phi = rng.uniform(size=n)
        if not alive.any():
            break
        t_hit, surface, axis = _next_hit(pos, dirs, scene)

        rel = rcv - pos
        s_close = np.einsum("ij,ij->i", rel, dirs)
        q2 = np.einsum("ij,ij->i", rel, rel) - s_close**2
        half = np.sqrt(np.clip(radius**2 - q2, 0.0, None))
        chord = np.clip(np.minimum(s_close + half, t_hit) - np.maximum(s_close - half, 0.0), 0.0, None)
        counted = alive & (chord > 0)
        if diffuse_only:
            counted &= scattered | (order > cfg.ism_max_order)
        if np.any(counted):
            s_reg = np.clip(s_close[counted], 0.0, t_hit[counted])
            path = travelled[counted] + s_reg
            e_reg = energy[counted] * _air_factor(path, scene.air_absorption_enabled)
            bins_out.append(np.floor(path / c / cfg.bin_width).astype(np.int64))
            energy_out.append(e_reg * (chord[counted] * scale)[:, None])

        pos = pos + dirs * t_hit[:, None]
        travelled = travelled + t_hit
        energy = energy * (1.0 - alpha[surface])
        order += 1

        sm = s_mean[surface]
        sb = scatter[surface]
        do_scatter = u_scatter < sm
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(do_scatter[:, None], sb / sm[:, None], (1.0 - sb) / (1.0 - sm[:, None]))
        energy = energy * np.nan_to_num(w, nan=0.0, posinf=0.0)
        scattered |= do_scatter

        # specular: flip the normal component
        new_dirs = dirs.copy()
        new_dirs[rows, axis] = -dirs[rows, axis]
        # Lambert: cosine-weighted hemisphere about the inward normal
        inward = -np.sign(dirs[rows, axis])
        r = np.sqrt(u_r)
        phi = 2 * np.pi * u_phi
        lam = np.empty((n, 3))
        t1 = (axis + 1) % 3
        t2 = (axis + 2) % 3
        lam[rows, axis] = inward * np.sqrt(1.0 - u_r)
        lam[rows, t1] = r * np.cos(phi)
        lam[rows, t2] = r * np.sin(phi)
        dirs = np.where(do_scatter[:, None], lam, new_dirs)

        alive &= np.isfinite(t_hit) & (energy.max(axis=1) >= cutoff)

    if bins_out:
        bins = np.concatenate(bins_out)
        e = np.concatenate(energy_out)
        n_bins = int(bins.max()) + 1
        hist = np.stack([np.bincount(bins, weights=e[:, b], minlength=n_bins) for b in range(N_BANDS)])
    else:
        hist = np.zeros((N_BANDS, 0))
    return DiffuseHistogram(cfg.bin_width, hist, n)


def _diffuse_pressure(hist: DiffuseHistogram, rate: float, n_out: int, seed: int, numtaps: int) -> np.ndarray:
    """Turn band energy histograms into a noise-like pressure tail."""
    if hist.energy.size == 0 or not np.any(hist.energy):
        return np.zeros(n_out)
    rng = np.random.default_rng([seed, 1])
    bank = octave_filter_bank(rate, numtaps)
    bin_samples = hist.bin_width * rate
    centers = hist.times * rate
    t = np.arange(n_out)
    out = np.zeros(n_out)
    for b in range(N_BANDS):
        noise = rng.standard_normal(n_out + numtaps - 1)
        if not np.any(hist.energy[b]):
            continue
        # unit-variance white noise through the band filter keeps the band's share of a flat spectrum
        carrier = fftconvolve(noise, bank[b], mode="valid")
        env = np.sqrt(hist.energy[b] / bin_samples)
        env_t = np.interp(t, centers, env, left=0.0, right=0.0)
        out += carrier * env_t
    return out


def simulate_geometric(scene: Scene, cfg: GeoConfig | None = None) -> ImpulseResponse:
    """Full-band geometric RIR: occlusion-tested image sources plus a ray-traced diffuse tail."""
    cfg = cfg or GeoConfig()
    c = scene.speed_of_sound
    fs = cfg.output_rate
    rcv = np.asarray(scene.receiver)
    direct_amp = 1.0 / (4.0 * np.pi * scene.distance)
    amp_floor = direct_amp * 10.0 ** (cfg.energy_threshold / 20.0)

    arrivals = []
    n_visible = n_occluded = 0
    for im in enumerate_images(scene, cfg.ism_max_order):
        d = float(np.linalg.norm(rcv - np.asarray(im.position)))
        amp = im.attenuation / (4.0 * np.pi * d)
        amp = amp * np.sqrt(_air_factor(d, scene.air_absorption_enabled))
        if amp.max() < amp_floor:
            continue
        if not image_path_visible(im.position, rcv, scene):
            n_occluded += 1
            continue
        n_visible += 1
        arrivals.append((int(round(fs * d / c)), amp))

    hist = trace_diffuse(scene, cfg, diffuse_only=True) if cfg.ray_count > 0 else None
    last = max((i for i, _ in arrivals), default=0)
    if hist is not None and hist.energy.shape[1]:
        last = max(last, int(math.ceil(hist.energy.shape[1] * cfg.bin_width * fs)))
    n_out = int(round(cfg.duration * fs)) if cfg.duration is not None else last + 1

    bands = np.zeros((N_BANDS, n_out))
    for idx, amp in arrivals:
        if idx < n_out:
            bands[:, idx] += amp
    specular = filter_bands(bands, fs, cfg.band_filter_taps)
    diffuse = (
        _diffuse_pressure(hist, fs, n_out, cfg.rng_seed, cfg.band_filter_taps)
        if hist is not None
        else np.zeros(n_out)
    )
    meta = {
        "source": list(scene.source),
        "receiver": list(scene.receiver),
        "direct_distance": scene.distance,
        "speed_of_sound": c,
        "line_of_sight": scene.line_of_sight(),
        "image_sources_visible": n_visible,
        "image_sources_occluded": n_occluded,
        "config": {
            "ism_max_order": cfg.ism_max_order,
            "ray_count": cfg.ray_count,
            "max_ray_bounces": cfg.max_ray_bounces,
            "energy_threshold": cfg.energy_threshold,
            "output_rate": fs,
            "rng_seed": cfg.rng_seed,
            "histogram_bin": cfg.bin_width,
            "receiver_radius": cfg.receiver_radius,
        },
    }
    return ImpulseResponse(specular + diffuse, fs, "geometric", scene.digest(), meta)
