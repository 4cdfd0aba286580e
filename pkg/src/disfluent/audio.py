"""WAV ingest, resampling, and segmentation into fixed-length clips.

All audio is represented as float32 mono in [-1, 1]. The canonical rate for
the rest of the pipeline is 16 kHz, which makes the 25 ms analysis window
400 samples and the 10 ms hop 160 samples.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBuffer, MalformedHeader, UnsupportedFormat

CANONICAL_RATE = 16_000
CLIP_SECONDS = 4.0

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio with samples normalized to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    channels: int = 1

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class AudioClip:
    """A fixed-length segment cut from a subject's recording."""

    samples: np.ndarray
    sample_rate: int
    subject_id: str
    clip_index: int
    start_time_s: float = field(default=0.0)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise MalformedHeader(f"truncated file while reading {what}")
    return data


def load_wav(path) -> AudioBuffer:
    """Decode a RIFF/WAVE file (PCM16 or float32, 1-2 channels) to mono.

    Stereo is averaged down to one channel. Raises MalformedHeader for
    structural problems and UnsupportedFormat for codecs or sample widths
    outside the PCM16/float32 contract. I/O failures propagate as OSError.
    """
    with open(path, "rb") as fh:
        riff = _read_exact(fh, 12, "RIFF header")
        if riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise MalformedHeader(f"{path}: not a RIFF/WAVE file")

        fmt = None
        data = None
        while True:
            head = fh.read(8)
            if len(head) == 0:
                break
            if len(head) != 8:
                raise MalformedHeader(f"{path}: truncated chunk header")
            cid, size = struct.unpack("<4sI", head)
            if cid == b"fmt ":
                fmt = _read_exact(fh, size, "fmt chunk")
            elif cid == b"data":
                data = _read_exact(fh, size, "data chunk")
            else:
                fh.seek(size, 1)
            if size % 2:
                fh.seek(1, 1)  # chunks are word-aligned
            if fmt is not None and data is not None:
                break

        if fmt is None or len(fmt) < 16:
            raise MalformedHeader(f"{path}: missing or short fmt chunk")
        if data is None:
            raise MalformedHeader(f"{path}: missing data chunk")

    code, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{path}: {channels} channels (want 1 or 2)")
    if rate <= 0:
        raise MalformedHeader(f"{path}: non-positive sample rate {rate}")

    if code == _FMT_PCM and bits == 16:
        raw = np.frombuffer(data[: len(data) - len(data) % 2], dtype="<i2")
        samples = raw.astype(np.float32) / 32768.0
    elif code == _FMT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(data[: len(data) - len(data) % 4], dtype="<f4")
        samples = np.clip(raw, -1.0, 1.0).astype(np.float32)
    else:
        raise UnsupportedFormat(
            f"{path}: format code {code} / {bits}-bit (want PCM16 or float32)"
        )

    if channels == 2:
        n = len(samples) - len(samples) % 2
        samples = samples[:n].reshape(-1, 2).mean(axis=1).astype(np.float32)

    return AudioBuffer(samples=samples, sample_rate=int(rate), channels=1)


def write_wav(path, buf: AudioBuffer) -> None:
    """Write mono PCM16 little-endian WAV (the test-fixture format).

    Quantization matches the loader's 1/32768 scale so a round trip stays
    within one LSB; +1.0 saturates at 32767.
    """
    x = np.clip(buf.samples, -1.0, 1.0)
    pcm = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(payload)))
        fh.write(b"WAVE")
        fh.write(b"fmt ")
        fh.write(
            struct.pack(
                "<IHHIIHH", 16, _FMT_PCM, 1, buf.sample_rate,
                buf.sample_rate * 2, 2, 16,
            )
        )
        fh.write(b"data")
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)


# windowed-sinc resampler constants: Kaiser beta and taps per side
_KAISER_BETA = 8.0
_HALF_TAPS = 32


def _kaiser(u: np.ndarray, half_width: float) -> np.ndarray:
    z = np.clip(u / half_width, -1.0, 1.0)
    return np.i0(_KAISER_BETA * np.sqrt(1.0 - z * z)) / np.i0(_KAISER_BETA)


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited resampling by a normalized Kaiser-windowed sinc.

    Output length is round(n * target / source). The per-output normalization
    makes DC pass through exactly, including at the edges.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if len(buf.samples) == 0:
        raise EmptyBuffer("cannot resample an empty buffer")
    if target_rate == buf.sample_rate:
        return AudioBuffer(buf.samples.copy(), buf.sample_rate, 1)

    x = buf.samples.astype(np.float64)
    n_in = len(x)
    n_out = int(round(n_in * target_rate / buf.sample_rate))
    ratio = buf.sample_rate / target_rate
    cutoff = min(1.0, target_rate / buf.sample_rate)

    out = np.empty(n_out, dtype=np.float64)
    chunk = 1 << 15
    offsets = np.arange(-_HALF_TAPS + 1, _HALF_TAPS + 1)
    for lo in range(0, n_out, chunk):
        hi = min(lo + chunk, n_out)
        centers = np.arange(lo, hi) * ratio
        base = np.floor(centers).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        u = centers[:, None] - idx
        taps = cutoff * np.sinc(cutoff * u) * _kaiser(u, _HALF_TAPS + 1)
        valid = (idx >= 0) & (idx < n_in)
        taps = np.where(valid, taps, 0.0)
        gathered = x[np.clip(idx, 0, n_in - 1)] * valid
        norm = taps.sum(axis=1)
        out[lo:hi] = (taps * gathered).sum(axis=1) / norm

    return AudioBuffer(out.astype(np.float32), int(target_rate), 1)


def segment(buf: AudioBuffer, clip_seconds: float = CLIP_SECONDS,
            subject_id: str = "") -> list[AudioClip]:
    """Cut a mono buffer into consecutive non-overlapping fixed-length clips.

    A trailing partial segment is kept (zero-padded to full length) only when
    it holds at least half a clip of real audio; shorter tails are dropped.
    """
    clip_len = int(round(clip_seconds * buf.sample_rate))
    n = len(buf.samples)
    clips = []
    n_full = n // clip_len
    for k in range(n_full):
        clips.append(
            AudioClip(
                samples=buf.samples[k * clip_len:(k + 1) * clip_len].copy(),
                sample_rate=buf.sample_rate,
                subject_id=subject_id,
                clip_index=k,
                start_time_s=k * clip_seconds,
            )
        )
    tail = n - n_full * clip_len
    if tail * 2 >= clip_len:
        padded = np.zeros(clip_len, dtype=np.float32)
        padded[:tail] = buf.samples[n_full * clip_len:]
        clips.append(
            AudioClip(
                samples=padded,
                sample_rate=buf.sample_rate,
                subject_id=subject_id,
                clip_index=n_full,
                start_time_s=n_full * clip_seconds,
            )
        )
    return clips
