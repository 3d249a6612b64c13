"""Segment container, stratified splitting, and the segment archive format.

Archive byte layout (integers little-endian):

    magic       8 bytes   b"SCLSEG01"
    header_len  uint32
    header      UTF-8 JSON: segment_count, n_mels, n_frames, seed,
                pipeline_version
    record * segment_count:
        label          uint16
        rid_len        uint16
        recording_id   rid_len bytes UTF-8
        segment_index  uint32
        values         n_mels * n_frames float32 little-endian

Split membership lives in a JSON sidecar next to the archive
(``<archive>.splits.json``): the ratio, the seed, and a
recording_id -> split-name map.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ARCHIVE_MAGIC = b"SCLSEG01"
PIPELINE_VERSION = 1


@dataclass
class MelSegment:
    values: np.ndarray  # n_mels x n_frames, each in [0, 1]
    label: int
    recording_id: str
    segment_index: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def validate(self, energy_floor: float = 1e-4):
        v = self.values
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError(
                f"segment {self.recording_id}/{self.segment_index}: values "
                f"outside [0,1] (min {v.min():.3g}, max {v.max():.3g})"
            )
        if np.linalg.norm(v) < energy_floor:
            raise ValueError(
                f"segment {self.recording_id}/{self.segment_index}: Frobenius "
                f"norm below {energy_floor}"
            )


@dataclass
class SplitResult:
    train: list[MelSegment]
    val: list[MelSegment]
    test: list[MelSegment]
    assignment: dict[str, str]  # recording_id -> split name
    seed: int
    ratio: tuple[int, int, int]


def _allocate(n: int, ratio: tuple[int, int, int]) -> list[int]:
    """Largest-remainder split of n items; every bucket gets at least one."""
    total = sum(ratio)
    exact = [n * r / total for r in ratio]
    counts = [int(e) for e in exact]
    order = sorted(range(3), key=lambda i: exact[i] - counts[i], reverse=True)
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i in range(3):
        while counts[i] == 0:
            donor = max(range(3), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_segments(segments: list[MelSegment], seed: int,
                   ratio: tuple[int, int, int] = (7, 2, 1)) -> SplitResult:
    """Stratified per-class split; a recording never straddles splits."""
    by_class: dict[int, list[str]] = {}
    seen: set[str] = set()
    for seg in segments:
        if seg.recording_id not in seen:
            seen.add(seg.recording_id)
            by_class.setdefault(seg.label, []).append(seg.recording_id)

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for label in sorted(by_class):
        recordings = by_class[label]
        if len(recordings) < 3:
            raise ValueError(
                f"class {label} has only {len(recordings)} recordings; "
                f"need at least 3 to stratify"
            )
        recordings = list(recordings)
        rng.shuffle(recordings)
        n_train, n_val, n_test = _allocate(len(recordings), ratio)
        for rid in recordings[:n_train]:
            assignment[rid] = "train"
        for rid in recordings[n_train:n_train + n_val]:
            assignment[rid] = "val"
        for rid in recordings[n_train + n_val:]:
            assignment[rid] = "test"

    buckets: dict[str, list[MelSegment]] = {"train": [], "val": [], "test": []}
    for seg in segments:
        buckets[assignment[seg.recording_id]].append(seg)
    return SplitResult(train=buckets["train"], val=buckets["val"],
                       test=buckets["test"], assignment=assignment,
                       seed=seed, ratio=ratio)


# ---- archive I/O ------------------------------------------------------------

def write_archive(path, segments: list[MelSegment], seed: int,
                  n_mels: int = 128, n_frames: int = 16):
    header = {
        "segment_count": len(segments),
        "n_mels": n_mels,
        "n_frames": n_frames,
        "seed": seed,
        "pipeline_version": PIPELINE_VERSION,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for seg in segments:
            if seg.values.shape != (n_mels, n_frames):
                raise ValueError(
                    f"segment {seg.recording_id}/{seg.segment_index} has shape "
                    f"{seg.values.shape}, archive expects ({n_mels}, {n_frames})"
                )
            rid = seg.recording_id.encode("utf-8")
            fh.write(struct.pack("<H", seg.label))
            fh.write(struct.pack("<H", len(rid)))
            fh.write(rid)
            fh.write(struct.pack("<I", seg.segment_index))
            fh.write(np.ascontiguousarray(seg.values, dtype="<f4").tobytes())


def read_archive(path) -> tuple[list[MelSegment], dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(ARCHIVE_MAGIC)] != ARCHIVE_MAGIC:
        raise ValueError(f"not a segment archive: {path}")
    view = memoryview(raw)
    offset = len(ARCHIVE_MAGIC)
    (header_len,) = struct.unpack_from("<I", view, offset)
    offset += 4
    header = json.loads(bytes(view[offset:offset + header_len]).decode("utf-8"))
    offset += header_len
    n_values = header["n_mels"] * header["n_frames"]
    segments = []
    for _ in range(header["segment_count"]):
        (label, rid_len) = struct.unpack_from("<HH", view, offset)
        offset += 4
        rid = bytes(view[offset:offset + rid_len]).decode("utf-8")
        offset += rid_len
        (segment_index,) = struct.unpack_from("<I", view, offset)
        offset += 4
        values = np.frombuffer(view, dtype="<f4", count=n_values, offset=offset)
        offset += n_values * 4
        segments.append(MelSegment(
            values=values.astype(np.float64).reshape(header["n_mels"],
                                                     header["n_frames"]),
            label=label, recording_id=rid, segment_index=segment_index))
    if offset != len(raw):
        raise ValueError(f"trailing bytes in segment archive: {path}")
    return segments, header


def sidecar_path(archive_path) -> Path:
    return Path(str(archive_path) + ".splits.json")


def write_split_sidecar(archive_path, split: SplitResult):
    doc = {
        "ratio": list(split.ratio),
        "seed": split.seed,
        "assignment": {rid: split.assignment[rid]
                       for rid in sorted(split.assignment)},
    }
    sidecar_path(archive_path).write_text(json.dumps(doc, indent=2,
                                                     sort_keys=True))


def apply_split_sidecar(segments: list[MelSegment], archive_path) -> SplitResult:
    doc = json.loads(sidecar_path(archive_path).read_text())
    assignment = doc["assignment"]
    buckets: dict[str, list[MelSegment]] = {"train": [], "val": [], "test": []}
    for seg in segments:
        buckets[assignment[seg.recording_id]].append(seg)
    return SplitResult(train=buckets["train"], val=buckets["val"],
                       test=buckets["test"], assignment=assignment,
                       seed=doc["seed"], ratio=tuple(doc["ratio"]))
