"""Synthetic corpus generator.

Real stuttered-speech corpora are access-restricted, so end-to-end testing
uses generated audio where every stutter class is planted as a distinct
acoustic signature in its own frequency band:

  S   rapid tone bursts        ~1.8 kHz, 6 x 80 ms
  W   two identical tones       ~850 Hz, 2 x 450 ms
  PH  repeated 3-note pattern  480/600/540 Hz, two repetitions
  R   rising then falling chirp 1.1->1.5 then 1.5->1.0 kHz
  I   band-limited noise burst 2.8-4.8 kHz, 400 ms
  PR  sustained tone           ~2.3 kHz, 1.6 s

The bands are spaced so they stay disjoint under the per-subject frequency
factor; learnability across subjects is the point of the corpus, not
realism.

Each clip slot carries exactly one planted event, classes rotating per
subject so every class appears in every subject's recording. Subjects vary
by a frequency factor, noise level, and a low "voice" tone, giving LOSO
folds a real (if mild) train/test shift. Generation is fully deterministic
in the seed: identical seeds produce byte-identical WAV fixtures.
"""

import csv
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, CANONICAL_RATE, segment, write_wav
from .dataset import CorpusManifest, DisfluencyEvent, LabeledClip, label_clips
from .model import STUTTER_CLASSES

CLIP_SECONDS = 4.0


def _ramp(n_samples: int, sr: int, ramp_s: float = 0.008) -> np.ndarray:
    env = np.ones(n_samples)
    r = min(int(ramp_s * sr), n_samples // 2)
    if r > 0:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = fade
        env[-r:] = fade[::-1]
    return env


def _tone(duration_s: float, freq: float, amp: float, sr: int) -> np.ndarray:
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    return amp * np.sin(2 * np.pi * freq * t) * _ramp(n, sr)


def _chirp(duration_s: float, f0: float, f1: float, amp: float, sr: int) -> np.ndarray:
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / duration_s * t * t)
    return amp * np.sin(phase) * _ramp(n, sr)


def _noise_burst(duration_s: float, lo_hz: float, hi_hz: float, amp: float,
                 sr: int, rng) -> np.ndarray:
    n = int(round(duration_s * sr))
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    spec[(freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    x = np.fft.irfft(spec, n=n)
    peak = np.abs(x).max()
    if peak > 0:
        x = x / peak
    return amp * x * _ramp(n, sr)


def _signature(cls: str, k: float, amp: float, sr: int, rng) -> np.ndarray:
    """The planted waveform for one event of class cls."""
    gap = np.zeros(int(0.08 * sr))
    if cls == "S":
        burst = _tone(0.08, 1800.0 * k, amp, sr)
        parts = [burst, gap] * 5 + [burst]
    elif cls == "W":
        word = _tone(0.45, 850.0 * k, amp, sr)
        parts = [word, np.zeros(int(0.25 * sr)), word]
    elif cls == "PH":
        phrase = np.concatenate([
            _tone(0.25, 480.0 * k, amp, sr),
            _tone(0.25, 600.0 * k, amp, sr),
            _tone(0.25, 540.0 * k, amp, sr),
        ])
        parts = [phrase, np.zeros(int(0.25 * sr)), phrase]
    elif cls == "R":
        parts = [
            _chirp(0.5, 1100.0 * k, 1500.0 * k, amp, sr),
            np.zeros(int(0.15 * sr)),
            _chirp(0.4, 1500.0 * k, 1000.0 * k, amp, sr),
        ]
    elif cls == "I":
        parts = [_noise_burst(0.4, 2800.0, 4800.0, amp, sr, rng)]
    elif cls == "PR":
        parts = [_tone(1.6, 2300.0 * k, amp, sr)]
    else:
        raise ValueError(f"unknown class {cls!r}")
    return np.concatenate(parts)


def _background(n: int, f0: float, noise_amp: float, sr: int, rng) -> np.ndarray:
    t = np.arange(n) / sr
    # low "voice" tone with slow vibrato plus syllable-rate amplitude drive
    vibrato = np.sin(2 * np.pi * 0.7 * t)
    voice = 0.08 * np.sin(2 * np.pi * f0 * t + 2.0 * vibrato)
    syllables = 0.6 + 0.4 * np.clip(np.sin(2 * np.pi * 3.5 * t), 0.0, 1.0)
    return (voice * syllables + noise_amp * rng.standard_normal(n)).astype(np.float64)


def synth_corpus(out_dir, seed: int = 0, n_subjects: int = 4,
                 clips_per_subject: int = 10):
    """Generate WAV fixtures, an annotation CSV, and a manifest.

    Returns the CorpusManifest (also written to out_dir/manifest.json).
    Labels come from the same annotation/labeling path the real pipeline
    uses: events are written to annotations.csv and folded onto clips via
    label_clips.
    """
    if n_subjects < 2:
        raise ValueError("need at least 2 subjects for LOSO to be possible")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sr = CANONICAL_RATE

    subjects = [f"s{idx:02d}" for idx in range(n_subjects)]
    events: list[DisfluencyEvent] = []
    all_clips: list[LabeledClip] = []

    for idx, subject in enumerate(subjects):
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        k = 0.97 + 0.06 * rng.random()
        f0 = 85.0 + 75.0 * rng.random()
        noise_amp = 0.015 + 0.01 * rng.random()

        n_total = int(clips_per_subject * CLIP_SECONDS * sr)
        signal = _background(n_total, f0, noise_amp, sr, rng)

        for slot in range(clips_per_subject):
            cls = STUTTER_CLASSES[(idx + slot) % len(STUTTER_CLASSES)]
            sig = _signature(cls, k, 0.35, sr, rng)
            clip_start = slot * CLIP_SECONDS
            latest = CLIP_SECONDS - len(sig) / sr - 0.2
            offset = 0.2 + rng.random() * max(latest - 0.2, 0.0)
            start_s = clip_start + offset
            i0 = int(round(start_s * sr))
            signal[i0:i0 + len(sig)] += sig
            events.append(DisfluencyEvent(subject, round(start_s, 3),
                                          round(start_s + len(sig) / sr, 3), cls))

        wav_path = out_dir / f"{subject}.wav"
        buf = AudioBuffer(np.clip(signal, -1.0, 1.0).astype(np.float32), sr)
        write_wav(wav_path, buf)

        clips = segment(buf, CLIP_SECONDS, subject)
        all_clips.extend(
            LabeledClip(wav_path=wav_path.name, subject_id=subject,
                        clip_index=c.clip_index)
            for c in clips
        )

    events.sort(key=lambda e: (e.subject_id, e.start_s))
    with open(out_dir / "annotations.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "start_s", "end_s", "class"])
        for ev in events:
            writer.writerow([ev.subject_id, f"{ev.start_s:.3f}",
                             f"{ev.end_s:.3f}", ev.stutter_class])

    labeled = label_clips(all_clips, events, CLIP_SECONDS)
    manifest = CorpusManifest(
        subjects=subjects,
        clips=labeled,
        provenance=f"synthetic corpus seed={seed} "
                   f"{n_subjects}x{clips_per_subject} clips",
    )
    manifest.save(out_dir / "manifest.json")
    return manifest
