"""Stutter disfluency detection and classification from raw audio.

Pipeline: WAV ingest -> log-magnitude spectrograms -> residual conv stack ->
bidirectional LSTM head, one binary detector per stutter class, trained with
RMSProp and evaluated leave-one-subject-out.
"""

import ctypes
import ctypes.util

__version__ = "0.1.0"


def _tune_allocator():
    # Training repeatedly allocates and frees ~100 MB activation buffers.
    # glibc serves those with mmap by default, so every step pays page-fault
    # cost; raising the mmap/trim thresholds keeps them on the reusable heap.
    # Best effort only; silently skipped on non-glibc platforms.
    try:
        path = ctypes.util.find_library("c")
        libc = ctypes.CDLL(path) if path else ctypes.CDLL(None)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()
