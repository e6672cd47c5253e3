"""Acceptance criteria for the whole toolkit, one test per criterion.

Each test attaches a short measurement summary; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the run.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.signal import fftconvolve
from scipy.stats import kstest

from rirforge.analysis import band_energy_fraction, estimate_t60, mode_peaks, pearson
from rirforge.cli import main
from rirforge.dataset import T60Histogram, convolve, sample_matched
from rirforge.fdtd import FdtdConfig, simulate_wave
from rirforge.geometric import GeoConfig, simulate_geometric
from rirforge.hybrid import CrossoverSpec, merge
from rirforge.rir import ImpulseResponse, save_rir, write_wav
from rirforge.scene import AxisAlignedBox, Scene, SurfaceMaterial, serialize_scene
from rirforge.srmr import srmr
from rirforge.wpe import wpe

from conftest import uniform_scene
from speech import exponential_rir, utterance

C = 343.0
FS = 16000


def band_energy(x, rate, lo, hi, nfft=1 << 17):
    X = np.abs(np.fft.rfft(x, nfft)) ** 2
    f = np.fft.rfftfreq(nfft, 1.0 / rate)
    return X[(f >= lo) & (f <= hi)].sum()


@pytest.mark.acceptance(1, "room-mode reproduction")
def test_room_modes(record_property):
    dims = (2.0, 2.0, 2.0)
    scene = Scene(dims, (0.43, 0.37, 0.29), (1.61, 1.47, 1.33), (SurfaceMaterial.uniform(0.0),) * 6)
    start = time.perf_counter()
    rir = simulate_wave(scene, FdtdConfig(max_frequency=500, duration=1.0))
    elapsed = time.perf_counter() - start
    peaks = np.array(mode_peaks(rir, f_max=250))
    analytic = [C / 2 * math.sqrt(k) / 2.0 for k in (1, 2, 3)]
    errors = [float(np.min(np.abs(peaks - f)) / f) for f in analytic]
    record_property("detail", "errors " + ", ".join(f"{100 * e:.2f}%" for e in errors) + f"; {elapsed:.1f} s")
    assert np.allclose(analytic, [85.75, 121.27, 148.52], atol=0.01)
    assert max(errors) <= 0.04
    assert elapsed < 10


@pytest.mark.acceptance(2, "diffraction contrast")
def test_nlos_contrast(record_property):
    start = time.perf_counter()
    dims, src, rcv = (3.0, 2.5, 2.2), (0.6, 1.25, 1.0), (2.4, 1.25, 1.0)
    open_scene = uniform_scene(dims, src, rcv, 0.3)
    wall = AxisAlignedBox((1.4, 0.0, 0.0), (1.6, 2.5, 1.6))
    blocked = Scene(dims, src, rcv, open_scene.surfaces, (wall,))
    assert not blocked.line_of_sight()

    geo = simulate_geometric(blocked, GeoConfig(ray_count=5000, duration=0.3)).samples
    k = round(48000 * blocked.distance / C)
    direct_level = 1 / (4 * np.pi * blocked.distance)
    geo_direct = float(np.max(np.abs(geo[k - 2 : k + 3])))

    cfg = FdtdConfig(max_frequency=500, duration=0.2)

    def low_energy(rir):
        return band_energy_fraction(rir.samples, rir.sample_rate, 500) * np.sum(rir.samples**2)

    ratio_db = 10 * np.log10(low_energy(simulate_wave(blocked, cfg)) / low_energy(simulate_wave(open_scene, cfg)))
    elapsed = time.perf_counter() - start
    record_property(
        "detail",
        f"geometric direct {geo_direct / direct_level:.1e} of free field; wave low band {ratio_db:.1f} dB; {elapsed:.0f} s",
    )
    assert geo_direct < 1e-3 * direct_level
    assert ratio_db > -40
    assert elapsed < 120


@pytest.mark.acceptance(3, "hybrid crossover fidelity")
def test_crossover_fidelity(record_property):
    rate = 48000
    scene = uniform_scene((3.0, 2.5, 2.2), (0.8, 0.7, 1.1), (2.1, 1.6, 1.3), 0.3)
    wave = simulate_wave(scene, FdtdConfig(max_frequency=700, duration=0.3))
    geo = simulate_geometric(scene, GeoConfig(ray_count=5000, duration=0.3))
    results = []
    # simulated branches at a crossover the wave solver can reach, with the filter
    # lengthened so the transition band scales with the crossover
    out = merge(wave, geo, CrossoverSpec(crossover_frequency=400, filter_length=2047), scene)
    g = out.metadata["calibration_gain"]
    results.append((
        10 * np.log10(band_energy(out.samples, rate, 0, 280) / (g**2 * band_energy(wave.samples, rate, 0, 280))),
        10 * np.log10(band_energy(out.samples, rate, 560, rate / 2) / band_energy(geo.samples, rate, 560, rate / 2)),
    ))
    # default 1400 Hz / 511 taps on independent broadband branches
    rng = np.random.default_rng(11)
    t = np.arange(9600) / rate
    a = rng.standard_normal(t.size) * np.exp(-t / 0.05)
    b = rng.standard_normal(t.size) * np.exp(-t / 0.05)
    out = merge(ImpulseResponse(a, rate, "fdtd"), ImpulseResponse(b, rate, "geometric"),
                CrossoverSpec(alignment="none", calibration="none"))
    results.append((
        10 * np.log10(band_energy(out.samples, rate, 0, 980) / band_energy(a, rate, 0, 980)),
        10 * np.log10(band_energy(out.samples, rate, 1960, rate / 2) / band_energy(b, rate, 1960, rate / 2)),
    ))
    # identical inputs: a pure delay of (L - 1) / 2 samples
    out = merge(ImpulseResponse(a, rate, "fdtd"), ImpulseResponse(a, rate, "geometric"), CrossoverSpec(alignment="peak_match"))
    expected = np.zeros(len(out))
    expected[255 : 255 + a.size] = a
    delay_err = float(np.max(np.abs(out.samples - expected)))
    worst = max(abs(v) for pair in results for v in pair)
    record_property("detail", f"worst band deviation {worst:.3f} dB; pure-delay error {delay_err:.1e}")
    assert worst < 0.5
    assert delay_err < 1e-6


@pytest.mark.acceptance(4, "Sabine consistency")
def test_sabine(record_property):
    dims = (4.0, 3.0, 2.5)
    volume, area, alpha = 30.0, 59.0, 0.3
    scene = uniform_scene(dims, (1.1, 0.9, 1.3), (2.7, 2.1, 1.6), alpha)
    start = time.perf_counter()
    rir = simulate_geometric(scene, GeoConfig(ray_count=20000))
    elapsed = time.perf_counter() - start
    t60 = estimate_t60(rir)[0]
    sabine = 0.161 * volume / (area * alpha)
    record_property("detail", f"T60 {t60:.3f} s vs Sabine {sabine:.3f} s ({100 * (t60 / sabine - 1):+.1f}%); {elapsed:.1f} s")
    assert abs(t60 / sabine - 1) <= 0.25
    assert elapsed < 30


@pytest.mark.acceptance(5, "Pearson correlation of the four-dataset table")
def test_pearson(tmp_path, capsys, record_property):
    table = tmp_path / "table.csv"
    table.write_text(
        "dataset,improvement,fraction\nA,1.86,0.17\nB,4.19,0.40\nC,23.09,0.66\nD,4.23,0.37\n"
    )
    assert main(["correlate", str(table)]) == 0
    last = capsys.readouterr().out.splitlines()[-1]
    r = float(last.split("=")[1])
    exact = pearson([1.86, 4.19, 23.09, 4.23], [0.17, 0.4, 0.66, 0.37])
    record_property("detail", f"printed '{last}', unrounded {exact:.6f}")
    assert abs(r - 0.9126) <= 0.0005
    assert abs(exact - 0.9126) <= 0.0005


@pytest.mark.acceptance(6, "T60 estimator")
def test_t60_estimator(record_property):
    worst = 0.0
    for T in (0.3, 0.5, 1.0, 3.0):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            n = int(1.5 * T * FS)
            h = rng.standard_normal(n) * 10.0 ** (-3.0 * np.arange(n) / FS / T)
            est = estimate_t60(h, FS)[0]
            worst = max(worst, abs(est / T - 1))
            for k in (0.125, 2.0, 1024.0):
                assert estimate_t60(k * h, FS)[0] == est
            for k in (1e-3, 7.5, 1e4):
                assert estimate_t60(k * h, FS)[0] == pytest.approx(est, rel=1e-12)
    record_property("detail", f"worst relative error {100 * worst:.2f}%")
    assert worst <= 0.05


@pytest.mark.acceptance(7, "sampling match")
def test_sampling_match(record_property):
    rng = np.random.default_rng(0)
    target_values = np.concatenate([rng.normal(0.4, 0.1, 60000), rng.normal(1.3, 0.25, 40000)])
    target_values = target_values[target_values > 0.05]
    pool = list(enumerate(rng.uniform(0.05, 2.5, 20000)))
    target = T60Histogram.from_values(target_values, 0.1)
    picked = sample_matched(pool, target, 50000, seed=42)
    assert picked == sample_matched(pool, target, 50000, seed=42)
    t60 = dict(pool)
    drawn = np.array([t60[i] for i in picked])

    # the target distribution is the histogram: its CDF is piecewise linear between bin edges
    edges = np.arange(target.counts.size + 1) * target.bin_width
    cdf = np.concatenate([[0.0], np.cumsum(target.counts) / target.total])
    ks = kstest(drawn, lambda v: np.interp(v, edges, cdf)).statistic
    got = T60Histogram.from_values(drawn, 0.1).counts
    m = max(got.size, target.counts.size)
    ks_bins = np.max(np.abs(
        np.cumsum(np.pad(got, (0, m - got.size))) / got.sum()
        - np.cumsum(np.pad(target.counts, (0, m - target.counts.size))) / target.total
    ))
    raw = kstest(drawn, np.sort(target_values)).statistic
    record_property("detail", f"KS {ks:.4f} vs target histogram, {ks_bins:.1e} at bin edges, {raw:.4f} vs raw target sample")
    assert ks <= 0.02


@pytest.mark.acceptance(8, "convolution oracle")
def test_convolution_oracle(record_property):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(rng.integers(100, 20000))
        h = rng.standard_normal(rng.integers(10, 8000)) * 0.1
        y, gain = convolve(x, h)
        worst = max(worst, float(np.max(np.abs(y - gain * np.convolve(x, h)))))
    record_property("detail", f"max abs error {worst:.1e}")
    assert worst < 1e-6


@pytest.mark.acceptance(9, "SRMR ordering")
def test_srmr_ordering(record_property):
    ordered = 0
    for seed in range(20):
        x = utterance(seed)
        scores = [srmr(fftconvolve(x, exponential_rir(t, FS, seed))[: x.size], FS) for t in (0.2, 1.0, 3.0)]
        ordered += scores[0] > scores[1] > scores[2]
    x = utterance(99)
    delta = np.zeros(64)
    delta[0] = 1.0
    delta_err = abs(srmr(fftconvolve(x, delta)[: x.size], FS) - srmr(x, FS))
    record_property("detail", f"{ordered}/20 strictly decreasing; delta-RIR change {delta_err:.1e}")
    assert ordered >= 19
    assert delta_err <= 1e-6


@pytest.mark.acceptance(10, "WPE improvement")
def test_wpe_improvement(record_property):
    improved = 0
    for seed in range(20):
        x = utterance(seed, duration=6.0)
        t60 = (0.5, 0.8, 1.0, 1.5)[seed % 4]
        y = fftconvolve(x, exponential_rir(t60, FS, seed))[: x.size]
        improved += srmr(wpe(y, FS), FS) > srmr(y, FS)
    worst_db = 0.0
    for seed in range(5):
        x = utterance(100 + seed, duration=6.0)
        worst_db = max(worst_db, abs(10 * np.log10(np.sum(wpe(x, FS) ** 2) / np.sum(x**2))))
    record_property("detail", f"{improved}/20 improved on 6 s utterances; anechoic energy change {worst_db:.2f} dB")
    assert improved >= 18
    assert worst_db < 0.5


@pytest.mark.acceptance(11, "end-to-end determinism")
def test_end_to_end_determinism(tmp_path, capsys, record_property):
    scene = uniform_scene((3.0, 2.5, 2.2), (0.8, 0.7, 1.1), (2.1, 1.6, 1.3), 0.3)
    (tmp_path / "scene.json").write_text(serialize_scene(scene))
    clean = tmp_path / "clean"
    for i in range(2):
        write_wav(clean / f"utt{i}.wav", 0.3 * utterance(i, duration=1.5), FS)
    extra = tmp_path / "extra"
    for i in range(10):
        save_rir(ImpulseResponse(exponential_rir(0.3 + 0.1 * i, FS, i), FS), extra / f"r{i}.wav")

    for run in ("a", "b"):
        root = tmp_path / run
        hybrid = root / "rirs" / "hybrid.wav"
        argv = ["simulate-hybrid", "--scene", str(tmp_path / "scene.json"), "--out", str(hybrid),
                "--max-frequency", "400", "--wave-duration", "0.2", "--rays", "3000", "--geo-duration", "0.2",
                "--crossover", "300", "--filter-length", "1023", "--seed", "7"]
        assert main(argv) == 0
        records = [json.dumps({"path": "rirs/hybrid.wav"})]
        records += [json.dumps({"path": f"../extra/{p.name}"}) for p in sorted(extra.glob("*.wav"))]
        (root / "rirs.jsonl").write_text("\n".join(records) + "\n")
        assert main(["build-dataset", "--clean", str(clean), "--rirs", str(root / "rirs.jsonl"),
                     "--out", str(root / "data"), "--seed", "7", "--workers", "4"]) == 0
    capsys.readouterr()

    def artifacts(root):
        return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    a, b = artifacts(tmp_path / "a"), artifacts(tmp_path / "b")
    manifest = (tmp_path / "a" / "data" / "manifest.jsonl").read_text().splitlines()
    # manifest inputs are absolute, so normalise the run directory before comparing
    a_manifest = a.pop(next(k for k in a if k.name == "manifest.jsonl"))
    b_manifest = b.pop(next(k for k in b if k.name == "manifest.jsonl"))
    same_manifest = a_manifest == b_manifest.replace(str(tmp_path / "b").encode(), str(tmp_path / "a").encode())
    record_property("detail", f"{len(a)} files byte-identical, manifest of {len(manifest)} records identical")
    assert len(manifest) == 22
    assert a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    assert same_manifest
