import json
import subprocess
import sys

import numpy as np
import pytest

from rirforge.cli import build_parser, main
from rirforge.rir import ImpulseResponse, load_rir, read_wav, save_rir, write_wav
from rirforge.scene import serialize_scene

from conftest import uniform_scene
from speech import exponential_rir, utterance

SUBCOMMANDS = (
    "simulate-wave simulate-geo simulate-hybrid analyze energy-curve fraction srmr wpe "
    "sample convolve build-dataset correlate"
).split()

TABLE = "dataset,improvement,fraction\nA,1.86,0.17\nB,4.19,0.40\nC,23.09,0.66\nD,4.23,0.37\n"

FAST_WAVE = ["--rate", "16000", "--max-frequency", "300", "--wave-duration", "0.15"]
FAST_GEO = ["--rate", "16000", "--rays", "400", "--ism-order", "2", "--geo-duration", "0.15"]
FAST_SIM = FAST_WAVE + FAST_GEO[2:]


@pytest.fixture
def scene_file(tmp_path):
    path = tmp_path / "scene.json"
    path.write_text(serialize_scene(uniform_scene((3.0, 2.5, 2.2), (1.0, 1.0, 1.2), (2.1, 1.6, 1.1), 0.3)))
    return path


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_help_exits_zero(name, capsys):
    with pytest.raises(SystemExit) as exc:
        main([name, "--help"])
    assert exc.value.code == 0
    assert "--seed" in capsys.readouterr().out


def test_every_subcommand_registered():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == set(SUBCOMMANDS)


def test_unknown_subcommand_and_flag_exit_2(capsys):
    for argv in (["frobnicate"], ["analyze", "--bogus", "x.wav"], []):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_failure_exits_1(tmp_path, capsys):
    assert main(["analyze", str(tmp_path / "missing.wav")]) == 1
    assert "does not exist" in capsys.readouterr().err
    bad = tmp_path / "scene.json"
    bad.write_text('{"room_dims": [1, 1]}')
    assert main(["simulate-geo", "--scene", str(bad), "--out", str(tmp_path / "o.wav")]) == 1


def test_module_entry_point(tmp_path):
    table = tmp_path / "t.csv"
    table.write_text(TABLE)
    done = subprocess.run([sys.executable, "-m", "rirforge", "correlate", str(table)], capture_output=True, text=True)
    assert done.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "rirforge", "nope"], capture_output=True, text=True)
    assert bad.returncode == 2 and "usage" in bad.stderr


def test_correlate_report(tmp_path, capsys):
    table = tmp_path / "t.csv"
    table.write_text(TABLE)
    assert main(["correlate", str(table)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "dataset improvement fraction"
    assert lines[1] == "A 1.8600 0.1700"
    r = float(lines[-1].split("=")[1])
    assert lines[-1].startswith("r = ") and abs(r - 0.9126) <= 0.0005
    assert r == pytest.approx(np.corrcoef([1.86, 4.19, 23.09, 4.23], [0.17, 0.4, 0.66, 0.37])[0, 1], abs=5e-5)


def test_correlate_tab_separated_and_missing_column(tmp_path, capsys):
    table = tmp_path / "t.tsv"
    table.write_text(TABLE.replace(",", "\t"))
    assert main(["correlate", str(table)]) == 0
    assert main(["correlate", str(table), "--y-column", "nothing"]) == 1


def test_analyze_directory(tmp_path, capsys):
    for i, t in enumerate((0.3, 0.5, 0.7)):
        save_rir(ImpulseResponse(exponential_rir(t, 16000, seed=i), 16000), tmp_path / f"r{i}.wav")
    assert main(["analyze", str(tmp_path), "--cutoff", "250", "--cutoff", "500"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 4
    assert "t60=0.3" in lines[0] and "fraction_below_500=" in lines[0] and "method=t20" in lines[0]
    stats, n = lines[-1].split()[1:]
    mean, std = stats.split("+/-")
    assert n == "n=3" and len(mean.split(".")[1]) == 4 and len(std.split(".")[1]) == 4
    assert float(mean) == pytest.approx(0.5, rel=0.05)


def test_environment_defaults(tmp_path, monkeypatch, capsys):
    table = tmp_path / "t.csv"
    table.write_text(TABLE.replace("fraction", "low"))
    monkeypatch.setenv("RIRFORGE_Y_COLUMN", "low")
    assert main(["correlate", str(table)]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "dataset improvement low"
    # explicit flag beats the environment
    assert main(["correlate", str(table), "--y-column", "fraction"]) == 1
    monkeypatch.setenv("RIRFORGE_WORKERS", "zero")
    with pytest.raises(SystemExit) as exc:
        main(["correlate", str(table)])
    assert exc.value.code == 2


def test_simulate_geo_and_wave(scene_file, tmp_path):
    out = tmp_path / "g.wav"
    assert main(["simulate-geo", "--scene", str(scene_file), "--out", str(out), *FAST_GEO]) == 0
    rir = load_rir(out)
    assert rir.method == "geometric" and rir.sample_rate == 16000
    out = tmp_path / "w.wav"
    assert main(["simulate-wave", "--scene", str(scene_file), "--out", str(out), *FAST_WAVE]) == 0
    assert load_rir(out).method == "fdtd"


def test_simulate_hybrid_deterministic(scene_file, tmp_path):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run / "h.wav"
        argv = ["simulate-hybrid", "--scene", str(scene_file), "--out", str(out), "--crossover", "250",
                "--keep-branches", *FAST_SIM]
        assert main(argv) == 0
        outs.append(out)
    assert load_rir(outs[0]).method == "hybrid"
    for name in ("h.wav", "h.wav.json", "h_wave.wav", "h_geo.wav"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_signal_subcommands(tmp_path, capsys):
    clean = tmp_path / "clean.wav"
    write_wav(clean, 0.3 * utterance(0, duration=2.0), 16000)
    save_rir(ImpulseResponse(exponential_rir(0.8, 16000), 16000), tmp_path / "rir.wav")
    rev = tmp_path / "rev.wav"
    assert main(["convolve", str(clean), str(tmp_path / "rir.wav"), str(rev)]) == 0
    assert capsys.readouterr().out.startswith("gain ")
    y, _ = read_wav(rev)
    assert np.max(np.abs(y)) == pytest.approx(0.9, abs=1e-6)

    assert main(["wpe", str(rev), str(tmp_path / "d.wav"), "--format", "pcm16"]) == 0
    assert read_wav(tmp_path / "d.wav")[0].size == y.size

    assert main(["srmr", str(clean), str(rev)]) == 0
    lines = capsys.readouterr().out.splitlines()
    s_clean, s_rev = (float(line.split()[-1]) for line in lines[:2])
    assert s_clean > s_rev and lines[2].startswith("mean ") and lines[2].endswith("n=2")

    assert main(["energy-curve", str(clean), "--max-points", "11"]) == 0
    rows = [tuple(map(float, r.split())) for r in capsys.readouterr().out.splitlines()]
    assert len(rows) == 11 and rows[0][0] == 0 and rows[-1] == (8000.0, 1.0)

    assert main(["fraction", str(clean), "--cutoff", "8000"]) == 0
    assert capsys.readouterr().out.split()[-1] == "1.0000"


def test_sample_and_build_dataset(tmp_path, capsys):
    rirs = tmp_path / "rirs"
    lines = []
    for i in range(12):
        t = 0.3 + 0.05 * i
        save_rir(ImpulseResponse(exponential_rir(t, 16000, seed=i), 16000), rirs / f"r{i:02d}.wav")
        lines.append(json.dumps({"path": f"rirs/r{i:02d}.wav", "t60": t}))
    pool = tmp_path / "pool.jsonl"
    pool.write_text("\n".join(lines) + "\n")
    target = tmp_path / "target.jsonl"
    target.write_text(json.dumps({"path": "x", "t60": 0.52}) + "\n")
    assert main(["sample", "--pool", str(pool), "--target", str(target), "-n", "5"]) == 0
    picked = [json.loads(r) for r in capsys.readouterr().out.splitlines()]
    assert len(picked) == 5 and all(0.5 <= p["t60"] < 0.6 for p in picked)

    clean = tmp_path / "clean"
    write_wav(clean / "c.wav", 0.3 * utterance(1, duration=1.0), 16000)
    assert main(["build-dataset", "--clean", str(clean), "--rirs", str(pool), "--out", str(tmp_path / "ds")]) == 0
    assert capsys.readouterr().out.strip() == "train=10 dev=1 test=1 skipped=0"
    assert len((tmp_path / "ds" / "manifest.jsonl").read_text().splitlines()) == 12
