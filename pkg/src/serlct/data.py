"""Dataset manifests, utterance-level splits, feature caches, and a synthetic corpus."""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import SAMPLE_RATE, SegmentBatch, Utterance, WavError, extract_segments, load_wav, write_wav

MANIFEST_COLUMNS = ("path", "label", "speaker", "utterance_id")
CACHE_MAGIC = b"SERFEAT1"


class ManifestError(ValueError):
    """One or more manifest rows could not be resolved; ``errors`` lists them."""

    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


@dataclass
class ManifestRow:
    path: Path
    label: int
    speaker: str
    utterance_id: str


def read_manifest(path, class_names: list[str]) -> list[ManifestRow]:
    """Parse ``path,label,speaker,utterance_id`` rows; labels are class names or indices.

    Relative paths resolve against the manifest's directory. Rows are returned
    sorted by utterance id.
    """
    path = Path(path)
    base = path.parent
    rows, errors = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError([f"{path}: missing columns {missing}"])
        for lineno, rec in enumerate(reader, start=2):
            label = _parse_label(rec["label"], class_names)
            wav = Path(rec["path"])
            if not wav.is_absolute():
                wav = base / wav
            if label is None:
                errors.append(f"line {lineno}: unknown label {rec['label']!r}")
                continue
            if not wav.is_file():
                errors.append(f"line {lineno}: missing file {wav}")
                continue
            rows.append(ManifestRow(wav, label, rec["speaker"], rec["utterance_id"]))
    ids = [r.utterance_id for r in rows]
    if len(set(ids)) != len(ids):
        errors.append("duplicate utterance_id values")
    if errors:
        raise ManifestError(errors)
    return sorted(rows, key=lambda r: r.utterance_id)


def _parse_label(text: str, class_names: list[str]) -> int | None:
    text = text.strip()
    if text in class_names:
        return class_names.index(text)
    if text.isdigit() and int(text) < len(class_names):
        return int(text)
    return None


def split_rows(rows: list[ManifestRow], seed: int, train_fraction: float = 0.8):
    """Seeded utterance-level shuffle split; returns ``(train, test)`` sorted by id."""
    order = np.random.default_rng(seed).permutation(len(rows))
    n_train = int(round(train_fraction * len(rows)))
    train = sorted((rows[i] for i in order[:n_train]), key=lambda r: r.utterance_id)
    test = sorted((rows[i] for i in order[n_train:]), key=lambda r: r.utterance_id)
    return train, test


def _extract_row(args) -> tuple[str, np.ndarray]:
    row, win_s, hop_s = args
    u = load_wav(row.path, row.label, row.speaker, row.utterance_id)
    return row.utterance_id, extract_segments(u, win_s, hop_s)


def extract_rows(rows: list[ManifestRow], win_s=1.8, hop_s=0.2, workers: int = 1) -> SegmentBatch:
    """MFCC segments for ``rows``; identical output for any worker count."""
    rows = sorted(rows, key=lambda r: r.utterance_id)
    jobs = [(r, win_s, hop_s) for r in rows]
    errors, results = [], []
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            outcomes = list(ex.map(_safe_extract, jobs))
    else:
        outcomes = [_safe_extract(j) for j in jobs]
    for row, out in zip(rows, outcomes):
        if isinstance(out, str):
            errors.append(f"{row.path}: {out}")
        else:
            results.append((row, out[1]))
    if errors:
        raise ManifestError(errors)
    feats, ids, labels = [], [], []
    for row, segs in results:
        feats.append(segs)
        ids.extend([row.utterance_id] * len(segs))
        labels.extend([row.label] * len(segs))
    if not feats:
        raise ManifestError(["no utterances to extract"])
    return SegmentBatch(np.concatenate(feats), ids, np.asarray(labels, dtype=np.int64))


def _safe_extract(job):
    try:
        return _extract_row(job)
    except (WavError, ValueError, OSError) as exc:
        return str(exc)


def content_hash(rows: list[ManifestRow], extra: dict) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(extra, sort_keys=True).encode())
    for r in sorted(rows, key=lambda r: r.utterance_id):
        h.update(f"{r.utterance_id}\0{r.label}\0{r.speaker}\0".encode())
        h.update(hashlib.sha256(Path(r.path).read_bytes()).digest())
    return h.hexdigest()


# -- feature cache ---------------------------------------------------------------

def save_feature_cache(path, batch: SegmentBatch, digest: str) -> None:
    """Layout: magic, 64-byte hex digest, u32 rank + u32 dims, f64 LE payload,
    u32 JSON length, JSON ``{"utterance_ids", "labels"}``."""
    feats = np.ascontiguousarray(batch.features, dtype="<f8")
    meta = json.dumps({"utterance_ids": batch.utterance_ids, "labels": batch.labels.tolist()}).encode()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(digest.encode("ascii"))
        fh.write(struct.pack("<I", feats.ndim))
        fh.write(struct.pack(f"<{feats.ndim}I", *feats.shape))
        fh.write(feats.tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def read_cache_digest(path) -> str | None:
    try:
        with open(path, "rb") as fh:
            head = fh.read(len(CACHE_MAGIC) + 64)
    except OSError:
        return None
    if len(head) < len(CACHE_MAGIC) + 64 or not head.startswith(CACHE_MAGIC):
        return None
    return head[len(CACHE_MAGIC) :].decode("ascii")


def load_feature_cache(path) -> tuple[SegmentBatch, str]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CACHE_MAGIC):
        raise ValueError(f"{path}: not a feature cache")
    pos = len(CACHE_MAGIC)
    digest = raw[pos : pos + 64].decode("ascii")
    pos += 64
    (rank,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    shape = struct.unpack_from(f"<{rank}I", raw, pos)
    pos += 4 * rank
    n = int(np.prod(shape))
    feats = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
    pos += 8 * n
    (mlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    meta = json.loads(raw[pos : pos + mlen])
    return SegmentBatch(feats, meta["utterance_ids"], np.asarray(meta["labels"], dtype=np.int64)), digest


def cached_extract(rows, cache_path, win_s=1.8, hop_s=0.2, workers=1) -> tuple[SegmentBatch, bool]:
    """Return ``(batch, hit)``; recompute only when the content digest changed."""
    digest = content_hash(rows, {"win_s": win_s, "hop_s": hop_s, "version": 1})
    cache_path = Path(cache_path)
    if read_cache_digest(cache_path) == digest:
        batch, _ = load_feature_cache(cache_path)
        return batch, True
    batch = extract_rows(rows, win_s, hop_s, workers)
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    save_feature_cache(cache_path, batch, digest)
    return batch, False


# -- synthetic corpus ----------------------------------------------------------------

def synthetic_utterance(label: int, duration_s: float, rng: np.random.Generator, num_classes: int = 4) -> np.ndarray:
    """Band-limited (100 Hz - 6 kHz) noise whose spectral tilt depends on the class."""
    n = int(round(duration_s * SAMPLE_RATE))
    spec = np.fft.rfft(rng.normal(size=n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    band = (freqs >= 100) & (freqs <= 6000)
    # tilt in dB/octave, spread evenly from -9 to +9
    tilt = -9.0 + 18.0 * label / max(num_classes - 1, 1)
    gain = np.zeros_like(freqs)
    gain[band] = 10 ** (tilt * np.log2(freqs[band] / 1000.0) / 20.0)
    y = np.fft.irfft(spec * gain, n=n)
    return 0.3 * y / np.max(np.abs(y))


def make_synthetic_dataset(
    out_dir,
    n_utterances: int = 32,
    num_classes: int = 4,
    duration_s: float = 1.8,
    seed: int = 0,
) -> Path:
    """Write a balanced synthetic corpus plus ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = [",".join(MANIFEST_COLUMNS)]
    for i in range(n_utterances):
        label = i % num_classes
        name = f"utt{i:03d}"
        write_wav(out_dir / f"{name}.wav", synthetic_utterance(label, duration_s, rng, num_classes))
        lines.append(f"{name}.wav,{label},spk{i % 4},{name}")
    manifest = out_dir / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def utterances_from_rows(rows: list[ManifestRow]) -> list[Utterance]:
    return [load_wav(r.path, r.label, r.speaker, r.utterance_id) for r in rows]
