"""Audio front end: WAV ingestion, STFT, mel projection, segmentation.

A recording becomes a square-root mel spectrogram (mel filters applied to
the power spectrogram, then square-rooted), is cut into non-overlapping
16-frame segments, low-energy segments are dropped, and the survivors are
normalized by the recording-wide maximum so every value lies in [0,1].
"""

from __future__ import annotations

import csv
import logging
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import MelSegment

log = logging.getLogger(__name__)

WINDOW_LEN = 2048
HOP = 512
N_MELS = 128
SEGMENT_FRAMES = 16
ENERGY_FLOOR = 1e-4


@dataclass
class Recording:
    samples: np.ndarray
    sample_rate: int
    label: int
    id: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size == 0:
            raise ValueError(f"recording {self.id!r} has no samples")


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM WAV as mono float64 in [-1, 1]."""
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {fh.getsampwidth() * 8}-bit")
        n_channels = fh.getnchannels()
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        pcm = pcm.reshape(-1, n_channels).mean(axis=1)
    return pcm, rate


def hann_window(length: int) -> np.ndarray:
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def stft_magnitude(recording: Recording, window_len: int = WINDOW_LEN,
                   hop: int = HOP) -> np.ndarray:
    """Hann-windowed magnitude STFT, shape (window_len//2 + 1, F).

    F = floor((len - window_len)/hop) + 1; no edge padding.
    """
    samples = recording.samples
    if samples.size < window_len:
        raise ValueError(
            f"recording {recording.id!r} has {samples.size} samples, "
            f"shorter than one {window_len}-sample window"
        )
    frames = sliding_window_view(samples, window_len)[::hop]
    spectra = np.fft.rfft(frames * hann_window(window_len), axis=1)
    return np.abs(spectra).T


def mel_filterbank(n_mels: int, n_fft_bins: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the mel scale spanning 0 to sample_rate/2."""
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    window_len = 2 * (n_fft_bins - 1)
    bin_freqs = np.arange(n_fft_bins) * sample_rate / window_len
    anchors = to_hz(np.linspace(0.0, to_mel(sample_rate / 2.0), n_mels + 2))
    bank = np.zeros((n_mels, n_fft_bins))
    for i in range(n_mels):
        lo, mid, hi = anchors[i], anchors[i + 1], anchors[i + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        bank[i] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def mel_project(mag: np.ndarray, n_mels: int = N_MELS,
                sample_rate: int = 44100) -> np.ndarray:
    """sqrt of the mel-scaled power spectrogram, shape (n_mels, F)."""
    bank = mel_filterbank(n_mels, mag.shape[0], sample_rate)
    return np.sqrt(bank @ (mag ** 2))


def segment_and_normalize(mel: np.ndarray, label: int, recording_id: str,
                          n_frames: int = SEGMENT_FRAMES,
                          energy_floor: float = ENERGY_FLOOR) -> list[MelSegment]:
    """Cut into non-overlapping n_frames windows, filter, normalize.

    The trailing remainder shorter than n_frames is dropped. Segments whose
    raw Frobenius norm is below the floor are discarded, then survivors are
    divided by the recording-wide maximum value (so relative energy across
    one recording's segments is preserved). The rare segment whose norm
    falls below the floor after normalization is discarded as well, so the
    stored-value invariant holds by construction.
    """
    n_bins, total_frames = mel.shape
    if total_frames < n_frames:
        log.warning("recording %s: %d frames < segment length %d, no segments",
                    recording_id, total_frames, n_frames)
        return []
    peak = mel.max()
    if peak <= 0.0:
        return []
    segments = []
    for index in range(total_frames // n_frames):
        chunk = mel[:, index * n_frames:(index + 1) * n_frames]
        if np.linalg.norm(chunk) < energy_floor:
            continue
        values = chunk / peak
        if np.linalg.norm(values) < energy_floor:
            continue
        segments.append(MelSegment(values=values, label=label,
                                   recording_id=recording_id,
                                   segment_index=index))
    return segments


def process_recording(recording: Recording) -> list[MelSegment]:
    mag = stft_magnitude(recording)
    mel = mel_project(mag, N_MELS, recording.sample_rate)
    return segment_and_normalize(mel, recording.label, recording.id)


@dataclass
class IngestReport:
    segments: list[MelSegment] = field(default_factory=list)
    recordings: int = 0
    skipped: list[str] = field(default_factory=list)


def read_manifest(manifest_path) -> list[tuple[str, int, str]]:
    """CSV rows of (filename, class-index, class-name)."""
    rows = []
    with open(manifest_path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if row[0].strip().lower() == "filename":
                continue
            filename, class_index = row[0].strip(), int(row[1])
            class_name = row[2].strip() if len(row) > 2 else str(class_index)
            rows.append((filename, class_index, class_name))
    return rows


def ingest_directory(wav_dir, manifest_path) -> IngestReport:
    """Run the feature pipeline over every manifest entry."""
    wav_dir = Path(wav_dir)
    report = IngestReport()
    for filename, class_index, _class_name in read_manifest(manifest_path):
        path = wav_dir / filename
        if not path.exists():
            report.skipped.append(filename)
            log.warning("missing wav file: %s", path)
            continue
        samples, rate = load_wav(path)
        rec = Recording(samples=samples, sample_rate=rate,
                        label=class_index, id=Path(filename).stem)
        report.segments.extend(process_recording(rec))
        report.recordings += 1
    return report
