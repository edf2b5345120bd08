import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.io import wavfile

from vocalguard.audio_io import (
    DEGENERATE_RANGE,
    SILENCE,
    Manifest,
    ManifestEntry,
    Waveform,
    fix_length,
    frame_array,
    frame_count,
    frame_signal,
    load_corpus,
    load_wav,
    make_window,
    normalize_minmax,
    normalize_waveform,
    random_chunk,
    read_manifest,
    save_corpus,
    write_manifest,
    write_wav,
)
from vocalguard.errors import (
    EmptyFramesError,
    EmptyInputError,
    ManifestError,
    SampleRateError,
    WavFormatError,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_minmax_endpoints():
    y, deg = normalize_minmax(np.array([-2.0, 0.0, 2.0]))
    assert not deg
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])


def test_constant_signal_is_flagged():
    w = normalize_waveform(Waveform(np.full(100, 0.3)))
    assert DEGENERATE_RANGE in w.flags
    assert np.all(w.samples == 0.0)


@given(st.lists(finite, min_size=2, max_size=200))
def test_minmax_range_property(xs):
    x = np.array(xs)
    y, deg = normalize_minmax(x)
    assert y.min() >= 0.0 and y.max() <= 1.0
    if not deg:
        assert y.min() == 0.0 and y.max() == 1.0
        # order preserving
        assert np.all(np.diff(y[np.argsort(x, kind="stable")]) >= 0)


def test_waveform_validation():
    with pytest.raises(EmptyInputError):
        Waveform(np.zeros(0))
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        Waveform(np.zeros(4), gender="X")


def test_fix_length_pads_with_silence():
    w = Waveform(np.zeros(8000))
    out = fix_length(w, 1.0)
    assert len(out) == 16000
    assert np.all(out.samples[8000:] == SILENCE)
    assert np.all(out.samples[:8000] == 0.0)


@given(n=st.integers(1, 40000), secs=st.sampled_from([0.25, 0.5, 1.0, 2.0]))
def test_fix_length_idempotent(n, secs):
    w = Waveform(np.linspace(0, 1, n))
    once = fix_length(w, secs)
    twice = fix_length(once, secs)
    assert len(once) == round(secs * 16000)
    np.testing.assert_array_equal(once.samples, twice.samples)
    k = min(n, len(once))
    np.testing.assert_array_equal(once.samples[:k], w.samples[:k])


def test_random_chunk_is_contiguous_slice():
    x = np.arange(48000) / 48000.0
    c = random_chunk(Waveform(x), 1.0, np.random.default_rng(3))
    start = int(round(c.samples[0] * 48000))
    np.testing.assert_allclose(c.samples, x[start : start + 16000])


@given(n=st.integers(0, 5000), L=st.integers(1, 600), hop=st.integers(1, 300))
def test_frame_count_formula(n, L, hop):
    expected = 0 if n < L else (n - L) // hop + 1
    assert frame_count(n, L, hop) == expected
    if expected:
        frames = frame_array(np.arange(n, dtype=float), L, hop)
        assert frames.shape == (expected, L)
        assert frames[-1, 0] == (expected - 1) * hop


def test_short_signal_has_no_frames():
    with pytest.raises(EmptyFramesError):
        frame_array(np.zeros(10), 11, 1)


def test_frame_signal_removes_mean_before_window():
    w = Waveform(np.full(1600, 0.7))
    fs = frame_signal(w, 0.04, 0.01, "hann")
    assert np.allclose(fs.frames, 0.0)
    assert len(fs) == frame_count(1600, 640, 160)


def test_windows():
    h = make_window("hann", 64)
    np.testing.assert_allclose(h, 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(64) / 63))
    g = make_window("gaussian", 101)
    assert g.max() <= 1.0 and g[0] < 0.01
    with pytest.raises(ValueError):
        make_window("kaiser", 8)


def test_wav_roundtrip_float(tmp_path):
    x = np.random.default_rng(0).uniform(0, 1, 1000)
    w = Waveform(x, source_id="a")
    write_wav(tmp_path / "a.wav", w)
    back = load_wav(tmp_path / "a.wav", normalize=False)
    np.testing.assert_allclose(back.samples, x.astype(np.float32))


def test_pcm16_and_stereo(tmp_path):
    left = (np.sin(np.arange(1000) / 10) * 20000).astype(np.int16)
    wavfile.write(tmp_path / "s.wav", 16000, np.stack([left, left], axis=1))
    w = load_wav(tmp_path / "s.wav")
    assert w.samples.min() == 0.0 and w.samples.max() == 1.0


def test_wav_rejections(tmp_path):
    wavfile.write(tmp_path / "r.wav", 22050, np.zeros(100, dtype=np.int16))
    with pytest.raises(SampleRateError):
        load_wav(tmp_path / "r.wav")
    wavfile.write(tmp_path / "i.wav", 16000, np.zeros(100, dtype=np.int32))
    with pytest.raises(WavFormatError):
        load_wav(tmp_path / "i.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav at all")
    with pytest.raises(WavFormatError):
        load_wav(tmp_path / "junk.wav")
    wavfile.write(tmp_path / "e.wav", 16000, np.zeros(0, dtype=np.int16))
    with pytest.raises(EmptyInputError):
        load_wav(tmp_path / "e.wav")


def test_manifest_roundtrip(tmp_path):
    m = Manifest([
        ManifestEntry("a.wav", "spk1", "F", frozenset({"x", "y"})),
        ManifestEntry("b.wav", "spk2", None),
    ])
    write_manifest(tmp_path / "m.csv", m)
    back = read_manifest(tmp_path / "m.csv")
    assert back.entries == m.entries
    assert back.resolve(back.entries[0]) == tmp_path / "a.wav"
    with pytest.raises(ManifestError):
        back.require_labels()


def test_manifest_errors(tmp_path):
    with pytest.raises(ManifestError):
        Manifest([ManifestEntry("a.wav", "1", "F"), ManifestEntry("a.wav", "2", "M")])
    (tmp_path / "bad.csv").write_text("file,who\nx,y\n")
    with pytest.raises(ManifestError):
        read_manifest(tmp_path / "bad.csv")
    with pytest.raises(ManifestError):
        read_manifest(tmp_path / "missing.csv")


def test_corpus_roundtrip_keeps_perturbed_values(tmp_path):
    x = np.linspace(0.2, 0.6, 500)
    waves = [
        Waveform(x, source_id="clean", gender="F"),
        Waveform(x, source_id="adv", gender="M", tags={"perturbed"}),
    ]
    save_corpus(waves, tmp_path)
    back = load_corpus(read_manifest(tmp_path / "manifest.csv"))
    assert [w.source_id for w in back] == ["clean", "adv"]
    assert back[0].samples.max() == 1.0  # renormalized
    np.testing.assert_allclose(back[1].samples, x.astype(np.float32))
    assert back[1].gender == "M" and "perturbed" in back[1].tags
