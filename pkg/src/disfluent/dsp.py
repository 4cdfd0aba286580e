"""Log-magnitude spectrogram features.

Analysis frames are taken every 10 ms on a 25 ms window, zero-padded to a
512-point FFT, which at 16 kHz yields 257 frequency bins. A 4-second clip
produces 398 frames.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .errors import LengthTooSmall, MalformedHeader, TooShort

CACHE_MAGIC = b"DSFG"
CACHE_VERSION = 1


@dataclass(frozen=True)
class SpectrogramConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_len: int = 512
    log_floor: float = 1e-10
    normalize: bool = True

    def window_len(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_len(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def validate(self, sample_rate: int) -> None:
        if self.fft_len & (self.fft_len - 1):
            raise ValueError(f"fft_len {self.fft_len} is not a power of two")
        if self.window_len(sample_rate) > self.fft_len:
            raise ValueError(
                f"window of {self.window_len(sample_rate)} samples exceeds "
                f"fft_len {self.fft_len}"
            )


@dataclass(frozen=True)
class Spectrogram:
    """values[freq_bin, frame], natural-log magnitude (optionally normalized)."""

    values: np.ndarray
    sample_rate: int

    @property
    def freq_bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window: w[k] = 0.5 - 0.5*cos(2*pi*k/(n-1))."""
    if n < 2:
        raise LengthTooSmall(f"window length {n} < 2")
    k = np.arange(n, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_count(num_samples: int, window_len: int, hop_len: int) -> int:
    return 1 + (num_samples - window_len) // hop_len


def stft(samples: np.ndarray, config: SpectrogramConfig,
         sample_rate: int) -> np.ndarray:
    """Windowed short-time Fourier transform.

    Returns the non-negative-frequency half as a complex matrix of shape
    (fft_len/2 + 1, frames). Frame f covers samples [f*hop, f*hop + window).
    """
    config.validate(sample_rate)
    win_len = config.window_len(sample_rate)
    hop = config.hop_len(sample_rate)
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < win_len:
        raise TooShort(f"{len(x)} samples < window of {win_len}")

    frames = frame_count(len(x), win_len, hop)
    window = hann_window(win_len)
    idx = np.arange(win_len)[None, :] + hop * np.arange(frames)[:, None]
    segs = x[idx] * window[None, :]
    spec = np.fft.rfft(segs, n=config.fft_len, axis=1)
    return spec.T


def spectrogram(clip: AudioClip, config: SpectrogramConfig = SpectrogramConfig()
                ) -> Spectrogram:
    """Log-magnitude spectrogram of one clip, optionally mean/var normalized."""
    spec = stft(clip.samples, config, clip.sample_rate)
    values = np.log(np.abs(spec) + config.log_floor)
    if config.normalize:
        mean = values.mean()
        std = values.std()
        values = (values - mean) / max(std, 1e-8)
    return Spectrogram(values=values.astype(np.float32),
                       sample_rate=clip.sample_rate)


def save_features(path, spec: Spectrogram) -> None:
    """Write one spectrogram in the binary feature-cache format."""
    values = np.ascontiguousarray(spec.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IIII", CACHE_VERSION, spec.freq_bins,
                             spec.frames, spec.sample_rate))
        fh.write(values.tobytes())


def load_features(path) -> Spectrogram:
    """Read a spectrogram back from the feature cache."""
    with open(path, "rb") as fh:
        head = fh.read(20)
        if len(head) != 20 or head[:4] != CACHE_MAGIC:
            raise MalformedHeader(f"{path}: not a feature-cache file")
        version, bins, frames, rate = struct.unpack("<IIII", head[4:])
        if version != CACHE_VERSION:
            raise MalformedHeader(f"{path}: unsupported cache version {version}")
        payload = fh.read(bins * frames * 4)
        if len(payload) != bins * frames * 4:
            raise MalformedHeader(f"{path}: truncated payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(bins, frames)
    return Spectrogram(values=values.copy(), sample_rate=rate)
