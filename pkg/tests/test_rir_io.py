import json

import numpy as np
import pytest
from scipy.io import wavfile

from rirforge.bands import complement, filter_bands, octave_filter_bank, windowed_sinc_lowpass
from rirforge.rir import ImpulseResponse, load_rir, read_wav, resample, save_rir, sidecar_path, write_wav


def test_impulse_response_validation():
    with pytest.raises(ValueError):
        ImpulseResponse([], 48000)
    with pytest.raises(ValueError):
        ImpulseResponse([0.0, np.nan], 48000)
    with pytest.raises(ValueError):
        ImpulseResponse([1.0], 0)
    with pytest.raises(ValueError):
        ImpulseResponse([1.0], 48000, method="magic")


def test_save_load_round_trip(tmp_path, rng):
    x = 0.1 * rng.standard_normal(1000)
    rir = ImpulseResponse(x, 48000, "geometric", "d1g", {"k": [1, 2]})
    path = tmp_path / "a" / "r.wav"
    side = save_rir(rir, path)
    assert side == sidecar_path(path) and side.name == "r.wav.json"
    doc = json.loads(side.read_text())
    assert doc["method"] == "geometric" and doc["num_samples"] == 1000
    back = load_rir(path)
    assert back.method == "geometric" and back.scene_digest == "d1g" and back.metadata == {"k": [1, 2]}
    assert np.allclose(back.samples, x, atol=1e-7)


def test_load_without_sidecar(tmp_path):
    write_wav(tmp_path / "m.wav", np.array([0.5, -0.5]), 16000)
    rir = load_rir(tmp_path / "m.wav")
    assert rir.method == "measured" and rir.sample_rate == 16000


@pytest.mark.parametrize("dtype,scale", [(np.int16, 32768.0), (np.int32, 2147483648.0)])
def test_read_integer_pcm(tmp_path, dtype, scale):
    data = np.array([0, 1000, -2000], dtype=dtype)
    wavfile.write(tmp_path / "i.wav", 8000, data)
    x, rate = read_wav(tmp_path / "i.wav")
    assert rate == 8000
    assert np.allclose(x, data / scale)


def test_read_stereo_mixes_down(tmp_path):
    wavfile.write(tmp_path / "s.wav", 8000, np.array([[0.2, 0.4], [1.0, 0.0]], dtype=np.float32))
    x, _ = read_wav(tmp_path / "s.wav")
    assert np.allclose(x, [0.3, 0.5])


def test_pcm16_write(tmp_path):
    write_wav(tmp_path / "p.wav", np.array([0.5, -1.0, 2.0]), 8000, "pcm16")
    rate, data = wavfile.read(tmp_path / "p.wav")
    assert data.dtype == np.int16
    assert list(data) == [16384, -32768, 32767]
    with pytest.raises(ValueError):
        write_wav(tmp_path / "q.wav", np.zeros(3), 8000, "mp3")


def test_resample_preserves_tone():
    rate_in, rate_out = 48000, 16000
    t = np.arange(rate_in) / rate_in
    y = resample(np.sin(2 * np.pi * 440 * t), rate_in, rate_out)
    assert y.size == rate_out
    ref = np.sin(2 * np.pi * 440 * np.arange(rate_out) / rate_out)
    assert np.max(np.abs(y[200:-200] - ref[200:-200])) < 1e-2


def test_lowpass_and_complement():
    lp = windowed_sinc_lowpass(1000, 48000, 255)
    assert lp.sum() == pytest.approx(1.0)
    assert np.allclose(lp, lp[::-1])
    hp = complement(lp)
    assert hp.sum() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        windowed_sinc_lowpass(1000, 48000, 256)


def test_octave_bank_sums_to_delay():
    bank = octave_filter_bank(48000, 1023)
    assert bank.shape == (6, 1023)
    total = bank.sum(axis=0)
    delta = np.zeros(1023)
    delta[511] = 1.0
    assert np.max(np.abs(total - delta)) < 1e-12
    f = np.fft.rfftfreq(1 << 15, 1 / 48000)
    for b, centre in enumerate((125, 250, 500, 1000, 2000, 4000)):
        H = np.abs(np.fft.rfft(bank[b], 1 << 15))
        assert H[np.argmin(np.abs(f - centre))] > 0.9


def test_filter_bands_identity_for_common_signal(rng):
    x = rng.standard_normal(3000)
    out = filter_bands(np.tile(x, (6, 1)), 48000)
    assert np.array_equal(out, x)


def test_truncated_wav_raises_value_error(tmp_path):
    (tmp_path / "t.wav").write_bytes(b"RIFF")
    with pytest.raises(ValueError, match="corrupt"):
        read_wav(tmp_path / "t.wav")
