"""Finite-difference time-domain solver for the scalar acoustic wave equation.

The scheme is the standard second-order leapfrog update on a cubic grid with a
7-point Laplacian::

    p[n+1] = 2 p[n] - p[n-1] + lambda^2 * sum_nb (p_nb[n] - p[n]) + dt^2 f[n]

with Courant number ``lambda = c dt / dx``. Walls and obstacle faces are
locally reacting: a face between an air cell and a wall or solid cell drops
out of the Laplacian (zero normal velocity) and contributes a damping term
``lambda * beta / 2`` where ``beta`` is the normalised wall admittance. With
``beta = 0`` everywhere the update conserves a discrete energy exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import butter, sosfreqz

from .rir import ImpulseResponse
from .scene import Scene

logger = logging.getLogger(__name__)

AIR, RIGID, BOUNDARY = 0, 1, 2

DEFAULT_CELL_CAP = 50_000_000
# ratio max_frequency / pulse peak frequency; puts the pulse spectrum ~65 dB down at max_frequency
DEFAULT_PULSE_BANDWIDTH = 3.3
DIVERGENCE_FACTOR = 1e6
DECONV_EPS = 1e-6
# causal high-pass at the bottom of the valid output band: corner (Hz), order
LOW_CUT = 25.0
LOW_CUT_ORDER = 4


class FdtdError(RuntimeError):
    pass


class FdtdInstabilityError(FdtdError):
    pass


@dataclass(frozen=True)
class SourceExcitation:
    """Soft-source pulse: a Ricker wavelet (second derivative of a Gaussian).

    The magnitude spectrum is ``(f/fc)^2 exp(1 - (f/fc)^2)``, peaking at the
    center frequency ``fc`` with no DC content, so a closed rigid room does not
    accumulate a pressure offset. ``bandwidth`` is the ratio of the solver's
    maximum frequency to ``fc`` and is only used when ``center_frequency`` is
    left unset.
    """

    kind: str = "gaussian_pulse"
    center_frequency: float | None = None
    bandwidth: float = DEFAULT_PULSE_BANDWIDTH
    amplitude: float = 1.0

    def resolve(self, max_frequency: float) -> "SourceExcitation":
        if self.center_frequency is not None:
            return self
        return SourceExcitation(self.kind, max_frequency / self.bandwidth, self.bandwidth, self.amplitude)

    @property
    def delay(self) -> float:
        # exp(-a t^2) < 1e-5 at |t| = delay
        return 3.4 / (math.pi * self.center_frequency)

    def waveform(self, t: np.ndarray) -> np.ndarray:
        """Unit-amplitude pulse shape (amplitude is applied at injection)."""
        a = (math.pi * self.center_frequency) ** 2
        tau = np.asarray(t) - self.delay
        return (1.0 - 2.0 * a * tau**2) * np.exp(-a * tau**2)

    def relative_spectrum(self, f) -> np.ndarray:
        x = np.asarray(f, dtype=float) / self.center_frequency
        return x**2 * np.exp(1.0 - x**2)


@dataclass(frozen=True)
class FdtdConfig:
    max_frequency: float = 1400.0
    points_per_wavelength: float = 10.0
    cfl_fraction: float = 0.9
    duration: float = 0.5
    output_rate: float = 48000.0
    source_pulse: SourceExcitation = field(default_factory=SourceExcitation)
    cell_cap: int = DEFAULT_CELL_CAP

    def __post_init__(self):
        if not self.max_frequency > 0:
            raise ValueError("max_frequency must be positive")
        if self.points_per_wavelength < 4:
            raise ValueError("points_per_wavelength must be >= 4")
        if not 0 < self.cfl_fraction <= 1:
            raise ValueError("cfl_fraction must lie in (0, 1]")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.output_rate > 2 * self.max_frequency:
            raise ValueError("output_rate must exceed twice max_frequency")
        pulse = self.pulse
        if pulse.kind != "gaussian_pulse":
            raise ValueError(f"unsupported source pulse kind {pulse.kind!r}")
        if pulse.center_frequency >= self.max_frequency or pulse.relative_spectrum(self.max_frequency) >= 1e-3:
            raise ValueError("source pulse spectrum must be below -60 dB at max_frequency")

    @property
    def pulse(self) -> SourceExcitation:
        return self.source_pulse.resolve(self.max_frequency)


@dataclass
class PressureGrid:
    """Grid state plus the per-cell update coefficients derived from the flags."""

    dims: tuple[int, int, int]
    dx: float
    dt: float
    speed_of_sound: float
    p: np.ndarray
    p_prev: np.ndarray
    flags: np.ndarray
    coef_self: np.ndarray
    coef_nb: np.ndarray
    coef_prev: np.ndarray
    periodic: bool = False
    steps_taken: int = 0

    @property
    def courant(self) -> float:
        return self.speed_of_sound * self.dt / self.dx

    @property
    def air(self) -> np.ndarray:
        return self.flags != RIGID


def _neighbour_sum(p: np.ndarray, out: np.ndarray, periodic: bool) -> np.ndarray:
    if periodic:
        out[...] = 0.0
        for axis in range(3):
            out += np.roll(p, 1, axis)
            out += np.roll(p, -1, axis)
        return out
    out[...] = 0.0
    out[1:] += p[:-1]
    out[:-1] += p[1:]
    out[:, 1:] += p[:, :-1]
    out[:, :-1] += p[:, 1:]
    out[:, :, 1:] += p[:, :, :-1]
    out[:, :, :-1] += p[:, :, 1:]
    return out


def _coefficients(flags: np.ndarray, beta_sum: np.ndarray, n_air: np.ndarray, lam: float):
    lam2 = lam * lam
    g = 0.5 * lam * beta_sum
    air = flags != RIGID
    coef_self = np.where(air, (2.0 - n_air * lam2) / (1.0 + g), 0.0)
    coef_nb = np.where(air, lam2 / (1.0 + g), 0.0)
    coef_prev = np.where(air, (g - 1.0) / (1.0 + g), 0.0)
    return coef_self, coef_nb, coef_prev


def make_grid(
    solid: np.ndarray,
    dx: float,
    dt: float,
    speed_of_sound: float = 343.0,
    face_beta: np.ndarray | None = None,
    periodic: bool = False,
) -> PressureGrid:
    """Build a grid from a solid-cell mask.

    ``face_beta`` has shape ``(6, nx, ny, nz)`` and gives the admittance seen by
    each cell through its -x, +x, -y, +y, -z, +z face when that neighbour is a
    wall or solid; ``None`` means rigid everywhere.
    """
    solid = np.asarray(solid, dtype=bool)
    dims = solid.shape
    lam = speed_of_sound * dt / dx
    if lam > 1.0 / math.sqrt(3.0) + 1e-12:
        raise FdtdError(f"Courant number {lam:.4f} exceeds the 3-D stability limit 1/sqrt(3)")
    flags = np.where(solid, RIGID, AIR).astype(np.int8)
    if periodic:
        n_air = np.full(dims, 6.0)
        beta_sum = np.zeros(dims)
    else:
        air = ~solid
        n_air = np.zeros(dims)
        missing = np.zeros((6,) + dims, dtype=bool)
        for axis in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(1, None)
            hi[axis] = slice(None, -1)
            nb_lower = np.zeros(dims, dtype=bool)
            nb_upper = np.zeros(dims, dtype=bool)
            nb_lower[tuple(lo)] = air[tuple(hi)]
            nb_upper[tuple(hi)] = air[tuple(lo)]
            n_air += nb_lower
            n_air += nb_upper
            missing[2 * axis] = ~nb_lower
            missing[2 * axis + 1] = ~nb_upper
        if face_beta is None:
            beta_sum = np.zeros(dims)
        else:
            beta_sum = np.sum(np.where(missing, face_beta, 0.0), axis=0)
        boundary = air & missing.any(axis=0)
        flags[boundary] = BOUNDARY
    coef_self, coef_nb, coef_prev = _coefficients(flags, beta_sum, n_air, lam)
    return PressureGrid(
        dims=tuple(int(d) for d in dims),
        dx=dx,
        dt=dt,
        speed_of_sound=speed_of_sound,
        p=np.zeros(dims),
        p_prev=np.zeros(dims),
        flags=flags,
        coef_self=coef_self,
        coef_nb=coef_nb,
        coef_prev=coef_prev,
        periodic=periodic,
    )


class _Stepper:
    """Allocation-free leapfrog kernel bound to one grid."""

    def __init__(self, grid: PressureGrid):
        self.grid = grid
        self._nb = np.empty(grid.dims)
        self._tmp = np.empty(grid.dims)

    def __call__(self) -> np.ndarray:
        g = self.grid
        nb = _neighbour_sum(g.p, self._nb, g.periodic)
        nb *= g.coef_nb
        np.multiply(g.coef_self, g.p, out=self._tmp)
        nb += self._tmp
        nxt = g.p_prev
        nxt *= g.coef_prev
        nxt += nb
        g.p_prev, g.p = g.p, nxt
        g.steps_taken += 1
        return nxt


def step(grid: PressureGrid, check: bool = True) -> PressureGrid:
    """Advance ``grid`` by one time step in place and return it."""
    _Stepper(grid)()
    if check and not np.all(np.isfinite(grid.p)):
        raise FdtdInstabilityError(f"non-finite pressure after step {grid.steps_taken}")
    return grid


def discrete_energy(grid: PressureGrid) -> float:
    """Conserved energy of the leapfrog scheme between levels n-1 and n (rigid walls)."""
    air = grid.air
    dp = (grid.p - grid.p_prev) / grid.dt
    kinetic = 0.5 * np.sum(dp[air] ** 2)
    c2 = (grid.speed_of_sound / grid.dx) ** 2
    potential = 0.0
    for axis in range(3):
        if grid.periodic:
            a = grid.p - np.roll(grid.p, -1, axis)
            b = grid.p_prev - np.roll(grid.p_prev, -1, axis)
            both = np.ones(grid.dims, dtype=bool)
        else:
            sl0 = [slice(None)] * 3
            sl1 = [slice(None)] * 3
            sl0[axis] = slice(None, -1)
            sl1[axis] = slice(1, None)
            a = grid.p[tuple(sl0)] - grid.p[tuple(sl1)]
            b = grid.p_prev[tuple(sl0)] - grid.p_prev[tuple(sl1)]
            both = air[tuple(sl0)] & air[tuple(sl1)]
        potential += 0.5 * c2 * np.sum((a * b)[both])
    return float(kinetic + potential)


def admittance(absorption: float) -> float:
    """Normalised admittance of a wall with pressure reflection ``sqrt(1 - alpha)``."""
    r = math.sqrt(max(0.0, 1.0 - absorption))
    return (1.0 - r) / (1.0 + r)


def choose_spacing(room_dims, dx_max: float) -> float:
    """Largest-error-minimising cell size <= ``dx_max`` for the three room lengths."""
    best_dx, best_err = dx_max, math.inf
    for length in room_dims:
        n0 = max(1, math.ceil(length / dx_max))
        for n in range(n0, n0 + 4):
            dx = length / n
            err = max(abs(round(L / dx) * dx - L) / L for L in room_dims)
            if err < best_err - 1e-12:
                best_dx, best_err = dx, err
    return best_dx


@dataclass
class _Layout:
    dims: tuple[int, int, int]
    dx: float
    dt: float
    native_rate: float
    up: int
    down: int


def _layout(scene: Scene, cfg: FdtdConfig) -> _Layout:
    c = scene.speed_of_sound
    dx = choose_spacing(scene.room_dims, c / (cfg.max_frequency * cfg.points_per_wavelength))
    dims = tuple(max(1, int(round(L / dx))) for L in scene.room_dims)
    n_cells = dims[0] * dims[1] * dims[2]
    if n_cells > cfg.cell_cap:
        raise FdtdError(f"grid of {n_cells} cells exceeds the cell cap {cfg.cell_cap}")
    dt_max = cfg.cfl_fraction * dx / (c * math.sqrt(3.0))
    # native rate = output_rate * down / up so a single polyphase stage reaches the output rate
    up = 64
    down = math.ceil(up / (dt_max * cfg.output_rate))
    native = cfg.output_rate * down / up
    g = math.gcd(up, down)
    return _Layout(dims, dx, 1.0 / native, native, up // g, down // g)


def _voxelize(scene: Scene, layout: _Layout):
    nx, ny, nz = layout.dims
    dx = layout.dx
    centers = [(np.arange(n) + 0.5) * dx for n in layout.dims]
    solid = np.zeros(layout.dims, dtype=bool)
    owner = np.full(layout.dims, -1, dtype=np.int32)
    for i, box in enumerate(scene.obstacles):
        masks = [(c >= lo) & (c <= hi) for c, lo, hi in zip(centers, box.min_corner, box.max_corner)]
        inside = masks[0][:, None, None] & masks[1][None, :, None] & masks[2][None, None, :]
        owner[inside & ~solid] = i
        solid |= inside

    wall_beta = [admittance(m.absorption[0]) for m in scene.surfaces]
    obst_beta = np.array([admittance(m.absorption[0]) for m in scene.obstacle_materials] + [0.0])
    face_beta = np.zeros((6,) + layout.dims)
    for axis in range(3):
        for side in range(2):
            k = 2 * axis + side
            # neighbour owner: shift the owner map by one cell toward this face
            nb_owner = np.full(layout.dims, -1, dtype=np.int32)
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            if side == 0:
                dst[axis], src[axis] = slice(1, None), slice(None, -1)
            else:
                dst[axis], src[axis] = slice(None, -1), slice(1, None)
            nb_owner[tuple(dst)] = owner[tuple(src)]
            face_beta[k] = obst_beta[nb_owner]
            edge = [slice(None)] * 3
            edge[axis] = 0 if side == 0 else layout.dims[axis] - 1
            face_beta[k][tuple(edge)] = wall_beta[k]
    return solid, face_beta


def _snap(point, layout: _Layout, solid: np.ndarray, what: str):
    idx = tuple(min(n - 1, max(0, int(math.floor(x / layout.dx)))) for x, n in zip(point, layout.dims))
    if solid[idx]:
        raise FdtdError(f"{what} maps to a non-air cell {idx}")
    center = (np.array(idx) + 0.5) * layout.dx
    return idx, center, float(np.linalg.norm(center - np.asarray(point)))


def deconvolve(recorded: np.ndarray, pulse: np.ndarray, rate: float, f_max: float, eps: float = DECONV_EPS) -> np.ndarray:
    """Regularised spectral division of ``recorded`` by ``pulse``, band-limited to ``f_max``.

    The upper band edge is a raised-cosine taper from ``f_max`` to ``1.15 f_max``.
    The bottom of the band goes through a causal Butterworth high-pass
    (``LOW_CUT``): locally reacting walls only absorb a changing pressure, so
    the exact response keeps a slowly relaxing offset after the direct sound.
    A causal filter turns that offset into a decaying transient instead of
    ringing that starts before the direct sound.
    """
    n = recorded.size
    fade = max(1, n // 20)
    y = recorded.copy()
    y[-fade:] *= 0.5 * (1.0 + np.cos(np.linspace(0.0, np.pi, fade)))
    # room for the high-pass tail so the circular product does not wrap onto the start
    nfft = 1 << int(math.ceil(math.log2(n + pulse.size + int(0.25 * rate))))
    Y = np.fft.rfft(y, nfft)
    S = np.fft.rfft(pulse, nfft)
    s_peak = np.max(np.abs(S))
    if s_peak == 0:
        return np.zeros(n)
    f = np.fft.rfftfreq(nfft, 1.0 / rate)
    taper = np.clip((f - f_max) / (0.15 * f_max), 0.0, 1.0)
    window = 0.5 * (1.0 + np.cos(np.pi * taper))
    sos = butter(LOW_CUT_ORDER, LOW_CUT, "highpass", fs=rate, output="sos")
    _, highpass = sosfreqz(sos, worN=f, fs=rate)
    H = Y * np.conj(S) / (np.abs(S) ** 2 + (eps * s_peak) ** 2) * window * highpass
    return np.fft.irfft(H, nfft)[:n]


def simulate_wave(scene: Scene, cfg: FdtdConfig | None = None) -> ImpulseResponse:
    """Simulate the low-frequency RIR of ``scene`` on an FDTD grid.

    The receiver trace is deconvolved by the source pulse and resampled to
    ``cfg.output_rate``. Amplitudes follow the same convention as the
    geometric solver: the free-field direct sound of a full-band simulation
    would be a sample of height ``1 / (4 pi d)``.
    """
    from .rir import resample  # local import keeps the module import light

    cfg = cfg or FdtdConfig()
    pulse = cfg.pulse
    layout = _layout(scene, cfg)
    solid, face_beta = _voxelize(scene, layout)
    grid = make_grid(solid, layout.dx, layout.dt, scene.speed_of_sound, face_beta)
    src_idx, src_c, src_snap = _snap(scene.source, layout, solid, "source")
    rcv_idx, rcv_c, rcv_snap = _snap(scene.receiver, layout, solid, "receiver")

    lam = grid.courant
    n_steps = int(math.ceil((cfg.duration + 2.0 * pulse.delay) * layout.native_rate)) + 1
    shape = pulse.waveform(np.arange(n_steps) * layout.dt)
    drive = pulse.amplitude * shape * (lam * lam / layout.dx)
    src_gain = grid.coef_nb[src_idx] / (lam * lam)
    logger.info(
        "fdtd grid %s dx=%.4f m dt=%.3e s steps=%d", layout.dims, layout.dx, layout.dt, n_steps
    )

    kernel = _Stepper(grid)
    recorded = np.zeros(n_steps)
    limit = DIVERGENCE_FACTOR * max(np.max(np.abs(drive)), 1e-300)
    for n in range(n_steps - 1):
        nxt = kernel()
        nxt[src_idx] += drive[n] * src_gain
        recorded[n + 1] = nxt[rcv_idx]
        if n % 256 == 255:
            peak = np.max(np.abs(nxt))
            if not np.isfinite(peak) or peak > limit:
                raise FdtdInstabilityError(f"pressure diverged at step {n + 1} (peak {peak:.3e})")

    h_native = deconvolve(recorded, shape, layout.native_rate, cfg.max_frequency)
    h = resample(h_native, layout.native_rate, cfg.output_rate) * (layout.native_rate / cfg.output_rate)
    n_out = int(round(cfg.duration * cfg.output_rate))
    h = h[:n_out]
    if h.size < n_out:
        h = np.pad(h, (0, n_out - h.size))

    meta = {
        "dx": layout.dx,
        "dt": layout.dt,
        "native_rate": layout.native_rate,
        "grid_dims": list(layout.dims),
        "effective_room_dims": [n * layout.dx for n in layout.dims],
        "source": list(scene.source),
        "receiver": list(scene.receiver),
        "source_cell_center": src_c.tolist(),
        "receiver_cell_center": rcv_c.tolist(),
        "source_snap_distance": src_snap,
        "receiver_snap_distance": rcv_snap,
        "direct_distance": float(np.linalg.norm(rcv_c - src_c)),
        "speed_of_sound": scene.speed_of_sound,
        "config": {
            "max_frequency": cfg.max_frequency,
            "points_per_wavelength": cfg.points_per_wavelength,
            "cfl_fraction": cfg.cfl_fraction,
            "duration": cfg.duration,
            "output_rate": cfg.output_rate,
            "source_pulse": asdict(pulse),
        },
    }
    return ImpulseResponse(h, cfg.output_rate, "fdtd", scene.digest(), meta)
