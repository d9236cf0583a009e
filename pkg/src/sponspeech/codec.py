"""Neural-audio-codec abstraction plus a deterministic mock implementation.

The mock codec frames the waveform into non-overlapping windows of H samples,
takes the first Q coefficients of an orthonormal DCT-II per frame, and
quantizes the coefficient vector residually: layer q projects the remaining
residual onto a seeded orthonormal direction and snaps the projection to a
uniform V-level codebook over a fixed range. Decoding sums the dequantized
layers and inverts the DCT. Midpoint codebooks make re-encoding a decoded
grid an exact fixed point, mirroring the residual-VQ structure of real codecs
while staying fully deterministic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, idct
from scipy.io import wavfile

from .errors import ValidationError


@dataclass(frozen=True)
class CodecSpec:
    num_quantizers: int = 8
    vocab_size: int = 1024
    frame_hop: int = 320
    sample_rate: int = 24000
    codebook_seed: int = 0

    def __post_init__(self):
        if self.num_quantizers < 1:
            raise ValidationError("num_quantizers must be >= 1")
        if self.vocab_size < 2:
            raise ValidationError("vocab_size must be >= 2")
        if self.frame_hop < 1:
            raise ValidationError("frame_hop must be >= 1")
        if self.num_quantizers > self.frame_hop:
            raise ValidationError("cannot keep more DCT coefficients than frame samples")


@dataclass
class CodecTokenGrid:
    """T frames x Q quantizer layers of discrete token ids."""

    tokens: np.ndarray
    spec: CodecSpec

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 2:
            raise ValidationError(f"token grid must be 2-D, got shape {self.tokens.shape}")
        if self.tokens.shape[1] != self.spec.num_quantizers:
            raise ValidationError(
                f"grid has {self.tokens.shape[1]} layers, spec expects "
                f"{self.spec.num_quantizers}"
            )
        if self.tokens.size and (
            self.tokens.min() < 0 or self.tokens.max() >= self.spec.vocab_size
        ):
            raise ValidationError("token ids must lie in [0, vocab_size)")

    @property
    def num_frames(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def num_quantizers(self) -> int:
        return int(self.tokens.shape[1])

    def __eq__(self, other):
        if not isinstance(other, CodecTokenGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.tokens, other.tokens)


def frame_count(num_samples: int, frame_hop: int) -> int:
    """T = ceil(N / H)."""
    if num_samples < 0:
        raise ValueError("num_samples must be non-negative")
    return -(-num_samples // frame_hop)


class MockCodec:
    """Deterministic residual scalar quantizer over a DCT subspace.

    Stateless after construction; encode/decode are safe to call concurrently.
    """

    def __init__(self, spec: CodecSpec = CodecSpec()):
        self.spec = spec
        rng = np.random.RandomState(spec.codebook_seed)
        basis, _ = np.linalg.qr(
            rng.standard_normal((spec.num_quantizers, spec.num_quantizers))
        )
        # Fix the sign convention so the basis is a pure function of the seed.
        basis = basis * np.sign(np.diag(basis))
        self._directions = basis.T.copy()  # row q = quantization direction of layer q
        # Coefficient projections are bounded by the frame L2 norm <= sqrt(H)
        # for samples in [-1, 1].
        self._range = float(np.sqrt(spec.frame_hop))
        self._step = 2.0 * self._range / spec.vocab_size

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.spec).encode())
        h.update(self._directions.tobytes())
        return h.hexdigest()

    def _codeword(self, ids: np.ndarray) -> np.ndarray:
        return -self._range + (ids.astype(np.float64) + 0.5) * self._step

    def encode(self, waveform) -> CodecTokenGrid:
        wave = np.asarray(waveform, dtype=np.float64)
        if wave.ndim != 1:
            raise ValueError(f"expected mono waveform, got shape {wave.shape}")
        if wave.size and not np.isfinite(wave).all():
            raise ValueError("waveform contains non-finite samples")
        if wave.size and (np.abs(wave).max() > 1.0 + 1e-9):
            raise ValueError("samples must lie in [-1, 1]")
        spec = self.spec
        T = frame_count(wave.size, spec.frame_hop)
        padded = np.zeros(T * spec.frame_hop)
        padded[: wave.size] = wave
        frames = padded.reshape(T, spec.frame_hop)
        coeffs = dct(frames, type=2, norm="ortho", axis=1)[:, : spec.num_quantizers]

        tokens = np.empty((T, spec.num_quantizers), dtype=np.int64)
        residual = coeffs
        for q in range(spec.num_quantizers):
            proj = residual @ self._directions[q]
            ids = np.clip(
                np.floor((proj + self._range) / self._step), 0, spec.vocab_size - 1
            ).astype(np.int64)
            tokens[:, q] = ids
            residual = residual - np.outer(self._codeword(ids), self._directions[q])
        return CodecTokenGrid(tokens=tokens, spec=spec)

    def decode(self, grid: CodecTokenGrid) -> np.ndarray:
        if grid.spec != self.spec:
            raise ValueError("grid spec does not match this codec")
        spec = self.spec
        tokens = grid.tokens
        if tokens.size and (tokens.min() < 0 or tokens.max() >= spec.vocab_size):
            raise ValueError("token ids must lie in [0, vocab_size)")
        T = grid.num_frames
        coeffs = np.zeros((T, spec.num_quantizers))
        for q in range(spec.num_quantizers):
            coeffs += np.outer(self._codeword(tokens[:, q]), self._directions[q])
        full = np.zeros((T, spec.frame_hop))
        full[:, : spec.num_quantizers] = coeffs
        return idct(full, type=2, norm="ortho", axis=1).reshape(-1)


def read_wav(path, expected_rate=None) -> np.ndarray:
    """Read a mono PCM16 WAV into float64 samples in [-1, 1]."""
    rate, data = wavfile.read(path)
    if expected_rate is not None and rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate}, expected {expected_rate}")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio")
    if data.dtype != np.int16:
        raise ValueError(f"{path}: expected PCM16, got {data.dtype}")
    return data.astype(np.float64) / 32768.0


def write_wav(path, waveform, sample_rate):
    """Write float samples as mono PCM16, clipping to [-1, 1]."""
    clipped = np.clip(np.asarray(waveform, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, sample_rate, np.round(clipped * 32767.0).astype(np.int16))
