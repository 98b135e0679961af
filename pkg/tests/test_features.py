import math
import struct

import numpy as np
import pytest

from serlct.features import (
    EmptyAudioError,
    FeatureStats,
    RiffHeaderError,
    UnsupportedCodecError,
    Utterance,
    build_segment_batch,
    load_wav,
    mel_filterbank,
    mfcc,
    read_wav,
    segment_utterance,
    write_wav,
)

from oracles import mfcc_naive

SR = 16000


def utt(seconds, rng=None, uid="u"):
    rng = rng or np.random.default_rng(0)
    return Utterance(rng.uniform(-0.5, 0.5, size=int(round(seconds * SR))), SR, 0, "s", uid)


# -- segmentation ----------------------------------------------------------------

@pytest.mark.parametrize("seconds, count", [(3.0, 7), (1.8, 1), (2.0, 2), (1.99, 1), (10.0, 42)])
def test_segment_count_formula(seconds, count):
    n = int(round(seconds * SR))
    assert count == (n - 28800) // 3200 + 1
    assert len(segment_utterance(utt(seconds))) == count


def test_segments_are_offset_windows():
    u = utt(3.0)
    segs = segment_utterance(u)
    for k, s in enumerate(segs):
        np.testing.assert_array_equal(s, u.samples[k * 3200 : k * 3200 + 28800])


def test_loop_fill_is_periodic():
    u = utt(1.0)
    (seg,) = segment_utterance(u)
    assert len(seg) == 28800
    n = len(u.samples)
    np.testing.assert_array_equal(seg[:n], u.samples)
    rest = 28800 - n
    np.testing.assert_array_equal(seg[n:], u.samples[:rest])
    i = np.arange(28800)
    np.testing.assert_array_equal(seg, u.samples[i % n])


def test_single_sample_loop_fill():
    (seg,) = segment_utterance(Utterance(np.array([0.25]), SR))
    assert np.all(seg == 0.25)


def test_segment_errors():
    with pytest.raises(EmptyAudioError):
        segment_utterance(Utterance(np.zeros(0), SR))
    with pytest.raises(ValueError):
        segment_utterance(utt(2.0), win_s=0.2, hop_s=0.2)


# -- MFCC -------------------------------------------------------------------------

def test_mfcc_frame_count_formula():
    out = mfcc(np.zeros(28800))
    assert out.shape == (26, (28800 - 400) // 160 + 1)


def test_mfcc_matches_naive_oracle(rng):
    x = rng.normal(size=4000) * 0.1
    np.testing.assert_allclose(mfcc(x), mfcc_naive(x), rtol=0, atol=1e-8)


def test_mfcc_oracle_on_a_tone():
    t = np.arange(3200) / SR
    x = 0.3 * np.sin(2 * np.pi * 440 * t) + 0.05 * np.cos(2 * np.pi * 3000 * t)
    np.testing.assert_allclose(mfcc(x), mfcc_naive(x), rtol=0, atol=1e-8)


def test_zero_window_hits_log_floor():
    out = mfcc(np.zeros(1600))
    np.testing.assert_allclose(out[0], math.sqrt(26) * math.log(1e-10), rtol=1e-12)
    np.testing.assert_allclose(out[1:], 0.0, atol=1e-9)


def test_mfcc_shift_covariance(rng):
    x = rng.normal(size=5000)
    a = mfcc(x[160:])
    b = mfcc(x)
    # pre-emphasis of the first sample differs, so the first frame is excluded
    np.testing.assert_allclose(a[:, 1:], b[:, 2 : a.shape[1] + 1], rtol=0, atol=1e-9)


def test_mfcc_short_window_errors():
    with pytest.raises(ValueError):
        mfcc(np.zeros(399))


def test_mel_filterbank_shape_and_peaks():
    fb = mel_filterbank(26, 512, SR)
    assert fb.shape == (26, 257)
    assert fb.min() >= 0 and fb.max() <= 1
    assert np.all(fb.sum(axis=1) > 0)


def test_feature_stats_roundtrip(rng):
    f = rng.normal(loc=3.0, scale=2.0, size=(5, 26, 20))
    st = FeatureStats.fit(f)
    z = st.normalize(f)
    np.testing.assert_allclose(z.mean(axis=(0, 2)), 0.0, atol=1e-12)
    np.testing.assert_allclose(st.denormalize(z), f, rtol=1e-12)
    const = np.ones((2, 26, 4))
    assert np.all(np.isfinite(FeatureStats.fit(const).normalize(const)))
    with pytest.raises(ValueError):
        FeatureStats.fit(np.zeros((0, 26, 4)))


def test_segment_batch_labels_follow_utterances():
    batch = build_segment_batch([utt(3.0, uid="a"), utt(1.0, uid="b")])
    assert batch.features.shape == (8, 26, 178)
    assert batch.utterance_ids == ["a"] * 7 + ["b"]


# -- WAV --------------------------------------------------------------------------

def _wav_bytes(fmt_tag=1, channels=1, rate=SR, bits=16, payload=b"\x00\x01" * 4, extensible=False):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", 0xFFFE if extensible else fmt_tag, channels, rate, rate * block, block, bits)
    if extensible:
        fmt += struct.pack("<HHI", 22, bits, 0) + struct.pack("<H", fmt_tag) + b"\x00" * 14
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_wav_roundtrip(tmp_path, rng):
    x = np.round(rng.uniform(-0.9, 0.9, 1000) * 32768) / 32768
    write_wav(tmp_path / "a.wav", x)
    y, rate = read_wav(tmp_path / "a.wav")
    assert rate == SR
    np.testing.assert_array_equal(y, x)


def test_wav_odd_chunk_and_stereo(tmp_path):
    pcm = struct.pack("<4h", 100, -5, 200, -6)
    p = tmp_path / "s.wav"
    p.write_bytes(_wav_bytes(channels=2, payload=pcm))
    y, _ = read_wav(p)
    np.testing.assert_array_equal(y, [100 / 32768, 200 / 32768])


def test_wav_extensible_pcm(tmp_path):
    p = tmp_path / "e.wav"
    p.write_bytes(_wav_bytes(extensible=True, payload=struct.pack("<2h", 7, 8)))
    y, _ = read_wav(p)
    np.testing.assert_array_equal(y, [7 / 32768, 8 / 32768])


@pytest.mark.parametrize(
    "raw, err",
    [
        (b"RIFX0000WAVE", RiffHeaderError),
        (_wav_bytes(fmt_tag=3, bits=32, payload=b"\x00" * 8), UnsupportedCodecError),
        (_wav_bytes(bits=8, payload=b"\x00" * 4), UnsupportedCodecError),
        (_wav_bytes(payload=b""), EmptyAudioError),
    ],
)
def test_wav_errors(tmp_path, raw, err):
    p = tmp_path / "bad.wav"
    p.write_bytes(raw)
    with pytest.raises(err):
        read_wav(p)


def test_resampling_to_16k(tmp_path):
    t = np.arange(8000) / 8000
    write_wav(tmp_path / "lo.wav", 0.5 * np.sin(2 * np.pi * 200 * t), 8000)
    u = load_wav(tmp_path / "lo.wav")
    assert u.sample_rate == SR and len(u.samples) == 16000
