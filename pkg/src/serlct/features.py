"""WAV ingestion, fixed-length segmentation with loop filling, and MFCC extraction."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.signal import resample_poly

SAMPLE_RATE = 16000


class WavError(ValueError):
    """Base class for WAV parse failures."""


class RiffHeaderError(WavError):
    pass


class UnsupportedCodecError(WavError):
    pass


class EmptyAudioError(WavError):
    pass


@dataclass
class Utterance:
    samples: np.ndarray
    sample_rate: int
    label: int = -1
    speaker_id: str = ""
    utterance_id: str = ""

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class SegmentBatch:
    features: np.ndarray                        # (N_seg, n_mfcc, n_frames)
    utterance_ids: list[str] = field(default_factory=list)
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, index) -> "SegmentBatch":
        index = np.asarray(index)
        return SegmentBatch(
            self.features[index], [self.utterance_ids[i] for i in index], self.labels[index]
        )


# -- WAV ---------------------------------------------------------------------

def read_wav(path) -> tuple[np.ndarray, int]:
    """Parse a 16-bit PCM RIFF/WAVE file; returns first-channel samples / 32768 and the rate."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise RiffHeaderError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid, size = raw[pos : pos + 4], struct.unpack("<I", raw[pos + 4 : pos + 8])[0]
        body = raw[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise RiffHeaderError(f"{path}: fmt chunk too short ({size} bytes)")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == 0xFFFE and size >= 26:
                # WAVE_FORMAT_EXTENSIBLE: real format tag leads the subformat GUID
                fmt = (struct.unpack("<H", body[24:26])[0],) + fmt[1:]
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise RiffHeaderError(f"{path}: missing fmt chunk")
    if data is None:
        raise RiffHeaderError(f"{path}: missing data chunk")
    tag, channels, rate, _, _, bits = fmt
    if tag != 1 or bits != 16:
        raise UnsupportedCodecError(f"{path}: only 16-bit PCM is supported (format {tag}, {bits} bits)")
    if channels < 1:
        raise RiffHeaderError(f"{path}: channel count is zero")
    frame = 2 * channels
    n = len(data) // frame
    if n == 0:
        raise EmptyAudioError(f"{path}: no audio samples")
    pcm = np.frombuffer(data[: n * frame], dtype="<i2").reshape(n, channels)[:, 0]
    return pcm.astype(np.float64) / 32768.0, int(rate)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write mono 16-bit PCM; samples are scaled by 32768 and clipped."""
    import wave

    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def load_wav(path, label: int = -1, speaker_id: str = "", utterance_id: str | None = None) -> Utterance:
    samples, rate = read_wav(path)
    if rate != SAMPLE_RATE:
        g = gcd(rate, SAMPLE_RATE)
        samples = resample_poly(samples, SAMPLE_RATE // g, rate // g)
        rate = SAMPLE_RATE
    uid = utterance_id if utterance_id is not None else Path(path).stem
    return Utterance(samples, rate, label, speaker_id, uid)


# -- segmentation --------------------------------------------------------------

def segment_utterance(u: Utterance, win_s: float = 1.8, hop_s: float = 0.2) -> list[np.ndarray]:
    """Cut ``win_s`` windows every ``hop_s``; shorter audio is tiled cyclically into one window."""
    if not win_s > hop_s > 0:
        raise ValueError(f"need win_s > hop_s > 0, got {win_s}, {hop_s}")
    n = len(u.samples)
    if n == 0:
        raise EmptyAudioError(f"utterance {u.utterance_id!r} is empty")
    win = int(round(win_s * u.sample_rate))
    hop = int(round(hop_s * u.sample_rate))
    if n < win:
        return [u.samples[np.arange(win) % n]]
    count = (n - win) // hop + 1
    return [u.samples[k * hop : k * hop + win] for k in range(count)]


# -- MFCC --------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular HTK-mel filters from 0 Hz to Nyquist, shape ``(n_mels, n_fft // 2 + 1)``."""
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc(
    window: np.ndarray,
    n_mels: int = 26,
    frame_ms: float = 25.0,
    hop_ms: float = 10.0,
    sample_rate: int = SAMPLE_RATE,
    preemphasis: float = 0.97,
    log_floor: float = 1e-10,
) -> np.ndarray:
    """All ``n_mels`` cepstral coefficients per frame, shape ``(n_mels, n_frames)``."""
    x = np.asarray(window, dtype=np.float64)
    frame = int(round(frame_ms * sample_rate / 1000))
    hop = int(round(hop_ms * sample_rate / 1000))
    if len(x) < frame:
        raise ValueError(f"window of {len(x)} samples is shorter than one {frame}-sample frame")
    emph = np.append(x[:1], x[1:] - preemphasis * x[:-1])
    n_frames = (len(x) - frame) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(emph, frame)[::hop][:n_frames]
    n_fft = next_pow2(frame)
    spec = np.fft.rfft(frames * np.hamming(frame), n=n_fft, axis=1)
    power = (spec.real**2 + spec.imag**2) / n_fft
    energies = power @ mel_filterbank(n_mels, n_fft, sample_rate).T
    logmel = np.log(np.maximum(energies, log_floor))
    return dct(logmel, type=2, norm="ortho", axis=1).T


# -- standardisation -----------------------------------------------------------

@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    floor: float = 1e-8

    @classmethod
    def fit(cls, features: np.ndarray, floor: float = 1e-8) -> "FeatureStats":
        """Per-coefficient statistics over every frame of ``(N, n_mfcc, n_frames)``."""
        if features.size == 0 or len(features) == 0:
            raise ValueError("cannot compute feature statistics on an empty split")
        mean = features.mean(axis=(0, 2))
        std = features.std(axis=(0, 2))
        return cls(mean, std, floor)

    def _scale(self) -> np.ndarray:
        return np.maximum(self.std, self.floor)[None, :, None]

    def normalize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean[None, :, None]) / self._scale()

    def denormalize(self, features: np.ndarray) -> np.ndarray:
        return features * self._scale() + self.mean[None, :, None]


def extract_segments(u: Utterance, win_s: float = 1.8, hop_s: float = 0.2, **mfcc_kw) -> np.ndarray:
    return np.stack([mfcc(w, **mfcc_kw) for w in segment_utterance(u, win_s, hop_s)])


def normalize_and_batch(segments: SegmentBatch, stats: FeatureStats) -> SegmentBatch:
    return SegmentBatch(stats.normalize(segments.features), list(segments.utterance_ids), segments.labels.copy())


def build_segment_batch(utterances: list[Utterance], win_s: float = 1.8, hop_s: float = 0.2) -> SegmentBatch:
    feats, ids, labels = [], [], []
    for u in utterances:
        segs = extract_segments(u, win_s, hop_s)
        feats.append(segs)
        ids.extend([u.utterance_id] * len(segs))
        labels.extend([u.label] * len(segs))
    if not feats:
        raise ValueError("no utterances to batch")
    return SegmentBatch(np.concatenate(feats), ids, np.asarray(labels, dtype=np.int64))
