"""Deterministic on-disk formats: binary float32 arrays, PCM16 WAV, scene bundles.

Array files carry an 8-byte magic ("A3MP" padded with zeros), a little-
endian u32 rank (at most 4), the u32 dims, then the row-major float32
little-endian payload.  WAV support is deliberately narrow: 16-bit PCM,
mono, no resampling.  All writers go through a temp-file + rename so
partially written files are never observed.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import wave
from dataclasses import dataclass

import numpy as np

from .scenegraph import Detection

MAGIC = b"A3MP\x00\x00\x00\x00"
MAX_RANK = 4
DEFAULT_RATE = 11025
DEFAULT_WINDOW_FRAMES = 8
PCM_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    """Mono audio: float samples in [-1, 1] at a fixed rate."""

    samples: np.ndarray
    rate: int = DEFAULT_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float).reshape(-1)
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples contain non-finite values")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.rate


def _atomic_write(path, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(obj, path):
    """Serialize JSON with sorted keys (byte-stable across runs), atomically."""
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def write_array(array: np.ndarray, path):
    """Write an array (rank <= 4) as a float32 little-endian binary file."""
    array = np.asarray(array)
    if array.ndim > MAX_RANK:
        raise ValueError(f"array rank {array.ndim} exceeds {MAX_RANK}")
    header = MAGIC + struct.pack("<I", array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    _atomic_write(path, header + payload)


def read_array(path) -> np.ndarray:
    """Read a binary array file back into a float32 ndarray."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    offset = len(MAGIC)
    if len(blob) < offset + 4:
        raise ValueError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if rank > MAX_RANK:
        raise ValueError(f"{path}: rank {rank} exceeds {MAX_RANK}")
    if len(blob) < offset + 4 * rank:
        raise ValueError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(blob) - offset != count * 4:
        raise ValueError(
            f"{path}: truncated payload ({len(blob) - offset} bytes for {count} floats)"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=offset, count=count)
    return data.reshape(shape).copy()


def write_wav(clip: AudioClip, path):
    """Write a clip as 16-bit PCM mono WAV (values clipped to the PCM range)."""
    pcm = np.clip(np.round(clip.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".wav")
    os.close(fd)
    try:
        with wave.open(tmp, "wb") as handle:
            handle.setnchannels(1)
            handle.setsampwidth(2)
            handle.setframerate(clip.rate)
            handle.writeframes(pcm.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM mono WAV; samples are scaled by 1/32768."""
    with wave.open(str(path), "rb") as handle:
        if handle.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {handle.getnchannels()} channels")
        if handle.getsampwidth() != 2:
            raise ValueError(
                f"{path}: expected 16-bit PCM, got {8 * handle.getsampwidth()}-bit"
            )
        rate = handle.getframerate()
        frames = handle.readframes(handle.getnframes())
    samples = np.frombuffer(frames, dtype="<i2").astype(float) / PCM_SCALE
    return AudioClip(samples, rate)


@dataclass(frozen=True)
class SceneBundle:
    """One video's worth of pipeline inputs, loaded eagerly and immutable.

    depth holds one (H, W) array per frame, flow one (H, W, 2) array per
    window, detections one Detection list per window.  true_labels is the
    bundle's ground-truth displacement record (list of dicts with node /
    window / vector / class10 / class28 keys).
    """

    root: str
    video_id: str
    fps: float
    frame_count: int
    window_frames: int
    depth: tuple
    flow: tuple
    detections: tuple
    sources: tuple
    mixture: AudioClip
    source_paths: tuple
    mixture_path: str
    true_labels: tuple
    auditory_classes: tuple

    @property
    def windows(self) -> int:
        return len(self.flow)

    @property
    def image_shape(self):
        return self.depth[0].shape


def _resolve(root, rel):
    path = os.path.join(root, rel)
    if not os.path.exists(path):
        raise FileNotFoundError(f"bundle references missing file: {path}")
    return path


def _load_detection(root, entry) -> Detection:
    feature = read_array(_resolve(root, entry["feature"])).astype(float)
    return Detection(
        label=int(entry["label"]),
        box=tuple(entry["box"]),
        score=float(entry["score"]),
        feature=feature,
    )


def load_bundle(directory) -> SceneBundle:
    """Load and validate a scene bundle from its manifest.json.

    Validation is eager: every referenced file must exist and parse, the
    window count must equal floor(frames / window_frames), and per-frame /
    per-window file lists must have matching lengths.  Frames beyond the
    last full window are ignored by downstream windowed ops.
    """
    root = str(directory)
    manifest_path = os.path.join(root, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"missing manifest: {manifest_path}")
    with open(manifest_path) as handle:
        manifest = json.load(handle)

    frame_count = int(manifest["frames"])
    window_frames = int(manifest.get("window_frames", DEFAULT_WINDOW_FRAMES))
    if window_frames < 1:
        raise ValueError(f"window_frames must be >= 1, got {window_frames}")
    expected_windows = frame_count // window_frames

    depth_rel = manifest["depth"]
    if len(depth_rel) != frame_count:
        raise ValueError(
            f"manifest lists {len(depth_rel)} depth files for {frame_count} frames"
        )
    depth = tuple(read_array(_resolve(root, rel)).astype(float) for rel in depth_rel)

    flow_rel = manifest["flow"]
    if len(flow_rel) != expected_windows:
        raise ValueError(
            f"manifest lists {len(flow_rel)} flow files but "
            f"floor({frame_count}/{window_frames}) = {expected_windows} windows"
        )
    flow = tuple(read_array(_resolve(root, rel)).astype(float) for rel in flow_rel)
    for idx, field in enumerate(flow):
        if field.ndim != 3 or field.shape[2] != 2 or field.shape[:2] != depth[0].shape:
            raise ValueError(
                f"flow window {idx} has shape {field.shape}, expected "
                f"{depth[0].shape + (2,)}"
            )

    with open(_resolve(root, manifest["detections"])) as handle:
        det_doc = json.load(handle)
    det_windows = det_doc["windows"]
    if len(det_windows) != expected_windows:
        raise ValueError(
            f"detections cover {len(det_windows)} windows, expected {expected_windows}"
        )
    detections = tuple(
        tuple(_load_detection(root, entry) for entry in window) for window in det_windows
    )

    audio_doc = manifest["audio"]
    mixture_path = _resolve(root, audio_doc["mixture"])
    mixture = read_wav(mixture_path)
    source_paths = tuple(_resolve(root, rel) for rel in audio_doc["sources"])
    sources = tuple(read_wav(path) for path in source_paths)

    with open(_resolve(root, manifest["labels"])) as handle:
        true_labels = tuple(json.load(handle))

    return SceneBundle(
        root=root,
        video_id=str(manifest["video_id"]),
        fps=float(manifest["fps"]),
        frame_count=frame_count,
        window_frames=window_frames,
        depth=depth,
        flow=flow,
        detections=detections,
        sources=sources,
        mixture=mixture,
        source_paths=source_paths,
        mixture_path=mixture_path,
        true_labels=true_labels,
        auditory_classes=tuple(manifest["auditory_classes"]),
    )
