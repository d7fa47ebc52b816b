"""Residual vector-quantized frame codec over raw waveform frames.

Stage 0 quantizes the signal frames, each later stage quantizes the
residual left by the stages before it. Codebooks come from stage-wise
k-means; index 0 of every stage is pinned to the zero vector, which
makes silence encode exactly and guarantees per-frame residual
contraction (the zero code is always an option, so the nearest code
never increases the residual).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans

from .dsp import Waveform
from .errors import ConfigurationError, CorruptCodegramError

_MAGIC = b"RVQ1"
_CODEGRAM_MAGIC = b"CGM1"

#: A codegram is an (L, T) int array of code indices; a token sequence is
#: its frame-major flattening; a latent sequence is the (T, frame_len)
#: float reconstruction.
Codegram = np.ndarray
TokenSequence = np.ndarray
LatentSequence = np.ndarray


@dataclass(frozen=True, eq=False)
class RvqCodebooks:
    """Trained codebooks: (num_stages, codebook_size, frame_len) float32."""

    vectors: np.ndarray
    sample_rate_hz: int
    trained_on: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if v.ndim != 3:
            raise ConfigurationError(f"codebooks must be 3-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("codebooks contain non-finite vectors")
        object.__setattr__(self, "vectors", v)

    @property
    def num_stages(self) -> int:
        return self.vectors.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.vectors.shape[1]

    @property
    def frame_len(self) -> int:
        return self.vectors.shape[2]


def frame_signal(w: Waveform, frame_len: int) -> np.ndarray:
    """(T, frame_len) non-overlapping frames, zero-padded to a full frame."""
    x = w.samples
    pad = (-x.size) % frame_len
    if pad:
        x = np.concatenate([x, np.zeros(pad)])
    return x.reshape(-1, frame_len)


def corpus_fingerprint(frames: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update(str(frames.shape).encode())
    digest.update(np.ascontiguousarray(frames, dtype=np.float32).tobytes())
    return digest.hexdigest()[:16]


def train_rvq(corpus: list[Waveform], num_stages: int = 4, codebook_size: int = 256,
              frame_len: int = 512, seed: int = 0) -> RvqCodebooks:
    """Fit stage-wise k-means codebooks on a waveform corpus.

    Lloyd iterations (20) with seeded k-means++ initialization, run on
    the frames for stage 0 and on the per-stage residuals afterwards.
    Deterministic given the seed.

    Raises
    ------
    ConfigurationError
        If the corpus yields fewer than ``10 * codebook_size`` frames or
        mixes sample rates.
    """
    if not corpus:
        raise ConfigurationError("empty training corpus")
    rate = corpus[0].sample_rate_hz
    if any(w.sample_rate_hz != rate for w in corpus):
        raise ConfigurationError("corpus mixes sample rates")
    frames = np.concatenate([frame_signal(w, frame_len) for w in corpus])
    if frames.shape[0] < 10 * codebook_size:
        raise ConfigurationError(
            f"corpus yields {frames.shape[0]} frames; need at least {10 * codebook_size}")

    fingerprint = corpus_fingerprint(frames)
    residual = frames.astype(np.float64)
    books = np.zeros((num_stages, codebook_size, frame_len), dtype=np.float32)
    for stage in range(num_stages):
        active = residual[np.linalg.norm(residual, axis=1) > 1e-12]
        n_clusters = min(codebook_size - 1, active.shape[0])
        if n_clusters > 0:
            km = KMeans(n_clusters=n_clusters, init="k-means++", n_init=1,
                        max_iter=20, random_state=seed + stage, algorithm="lloyd")
            km.fit(active)
            books[stage, 1:1 + n_clusters] = km.cluster_centers_.astype(np.float32)
        codes = _nearest(residual, books[stage].astype(np.float64))
        residual = residual - books[stage].astype(np.float64)[codes]
    return RvqCodebooks(books, rate, fingerprint)


def _nearest(points: np.ndarray, book: np.ndarray) -> np.ndarray:
    # ||p - c||^2 = ||p||^2 - 2 p.c + ||c||^2; ||p||^2 is constant per row.
    dots = points @ book.T
    dists = np.sum(book * book, axis=1)[None, :] - 2.0 * dots
    return np.argmin(dists, axis=1)


def encode(w: Waveform, cb: RvqCodebooks) -> Codegram:
    """Quantize a waveform into an (L, T) code matrix."""
    frames = frame_signal(w, cb.frame_len).astype(np.float64)
    codes = np.zeros((cb.num_stages, frames.shape[0]), dtype=np.int64)
    residual = frames
    for stage in range(cb.num_stages):
        book = cb.vectors[stage].astype(np.float64)
        codes[stage] = _nearest(residual, book)
        residual = residual - book[codes[stage]]
    return codes


def reconstruct_latent(codes: Codegram, cb: RvqCodebooks) -> LatentSequence:
    """Per-frame sums of the selected code vectors: (T, frame_len) float."""
    codes = _check_codes(codes, cb)
    out = np.zeros((codes.shape[1], cb.frame_len), dtype=np.float64)
    for stage in range(cb.num_stages):
        out += cb.vectors[stage].astype(np.float64)[codes[stage]]
    return out


def decode(codes: Codegram, cb: RvqCodebooks) -> Waveform:
    """Concatenated latent frames as a waveform."""
    return Waveform(reconstruct_latent(codes, cb).reshape(-1), cb.sample_rate_hz)


def decode_tokens(tokens, cb: RvqCodebooks) -> Waveform:
    """Decode a possibly partial token sequence.

    The trailing frame's missing stages contribute nothing (the frame is
    decoded from whatever stages are present); output length is a whole
    number of frames.
    """
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    L = cb.num_stages
    n_frames = -(-tokens.size // L)
    padded = np.zeros(L * n_frames, dtype=np.int64)
    padded[: tokens.size] = tokens
    grid = padded.reshape(n_frames, L).T
    out = np.zeros((n_frames, cb.frame_len), dtype=np.float64)
    for stage in range(L):
        book = cb.vectors[stage].astype(np.float64)
        have = np.arange(n_frames) * L + stage < tokens.size
        _check_range(grid[stage][have], cb)
        out[have] += book[grid[stage][have]]
    return Waveform(out.reshape(-1), cb.sample_rate_hz)


def _check_range(codes: np.ndarray, cb: RvqCodebooks) -> None:
    if codes.size and (codes.min() < 0 or codes.max() >= cb.codebook_size):
        raise CorruptCodegramError(
            f"code outside [0, {cb.codebook_size - 1}] for these codebooks")


def _check_codes(codes: Codegram, cb: RvqCodebooks) -> Codegram:
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2 or codes.shape[0] != cb.num_stages:
        raise CorruptCodegramError(
            f"codegram shape {codes.shape} does not match {cb.num_stages} stages")
    _check_range(codes, cb)
    return codes


def flatten(codes: Codegram) -> TokenSequence:
    """Frame-major 1-D token order: frame 0 stages 0..L-1, then frame 1, ..."""
    return np.asarray(codes, dtype=np.int64).T.reshape(-1)


def unflatten(tokens: TokenSequence, num_stages: int) -> Codegram:
    """Inverse of :func:`flatten`.

    Raises
    ------
    CorruptCodegramError
        If the sequence length is not a multiple of the stage count.
    """
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size % num_stages != 0:
        raise CorruptCodegramError(
            f"sequence of {tokens.size} tokens not divisible by {num_stages} stages")
    return tokens.reshape(-1, num_stages).T


def snr_db(reference: np.ndarray, approximation: np.ndarray) -> float:
    """Signal-to-noise ratio of an approximation, in dB (inf when exact)."""
    err = np.asarray(reference, dtype=np.float64) - np.asarray(approximation, dtype=np.float64)
    num = float(np.sum(np.asarray(reference, dtype=np.float64) ** 2))
    den = float(np.sum(err * err))
    if den == 0.0:
        return float("inf")
    return 10.0 * np.log10(num / den)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def save_codebooks(cb: RvqCodebooks, path: str | Path) -> None:
    """Binary codebook file: magic "RVQ1", little-endian uint32 header
    (stages, size, frame_len, sample_rate), then float32 vectors."""
    header = _MAGIC + struct.pack("<IIII", cb.num_stages, cb.codebook_size,
                                  cb.frame_len, cb.sample_rate_hz)
    body = cb.vectors.astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def load_codebooks(path: str | Path) -> RvqCodebooks:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise CorruptCodegramError(f"{path}: not a codebook file (bad magic)")
    stages, size, frame_len, rate = struct.unpack("<IIII", raw[4:20])
    expect = stages * size * frame_len * 4
    if len(raw) != 20 + expect:
        raise CorruptCodegramError(f"{path}: truncated codebook file")
    vectors = np.frombuffer(raw[20:], dtype="<f4").reshape(stages, size, frame_len)
    return RvqCodebooks(vectors, int(rate))


def save_codegram_json(codes: Codegram, path: str | Path, *, sample_rate_hz: int,
                       sample_count: int | None = None) -> None:
    doc = {
        "codes": np.asarray(codes, dtype=np.int64).tolist(),
        "sample_rate_hz": int(sample_rate_hz),
        "sample_count": int(sample_count) if sample_count is not None else None,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_codegram_json(path: str | Path) -> tuple[Codegram, int, int | None]:
    doc = json.loads(Path(path).read_text())
    codes = np.asarray(doc["codes"], dtype=np.int64)
    count = doc.get("sample_count")
    return codes, int(doc["sample_rate_hz"]), None if count is None else int(count)


def save_codegram_bin(codes: Codegram, path: str | Path, *, sample_rate_hz: int) -> None:
    """Compact form: magic "CGM1", uint32 (L, T, rate), uint16 codes."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.max(initial=0) > 0xFFFF or codes.min(initial=0) < 0:
        raise CorruptCodegramError("codes do not fit in 16 bits")
    header = _CODEGRAM_MAGIC + struct.pack("<III", codes.shape[0], codes.shape[1],
                                           sample_rate_hz)
    Path(path).write_bytes(header + codes.astype("<u2").tobytes())


def load_codegram_bin(path: str | Path) -> tuple[Codegram, int]:
    raw = Path(path).read_bytes()
    if raw[:4] != _CODEGRAM_MAGIC:
        raise CorruptCodegramError(f"{path}: not a codegram file (bad magic)")
    stages, frames, rate = struct.unpack("<III", raw[4:16])
    codes = np.frombuffer(raw[16:], dtype="<u2").astype(np.int64).reshape(stages, frames)
    return codes, int(rate)
