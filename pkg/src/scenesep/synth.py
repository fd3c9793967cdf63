"""Deterministic synthetic scene bundles with analytic ground truth.

The generator renders rectangle objects moving over a flat far plane:
depth maps carry each object's analytic depth, per-window flow fields the
exact pixel displacement between a window's first and last frame, and the
ground-truth label file replays the same float32 arithmetic the pipeline
will see, so lifted labels agree with the closed form class-for-class.
Audio is one tone per sounding object, chirped upward while the object
approaches the camera and downward while it recedes.

Analytic labels assume objects do not occlude each other's boxes and are
at least a few pixels wide (box-edge rounding can disturb a minority of
pixels, which the median absorbs).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import audio as audio_ops
from . import motion, tensorio
from .scenegraph import auditory_rank_key

NYQUIST = audio_ops.RATE / 2.0
CHIRP_RATE = 0.05  # relative frequency drift per second of approach/recession
DETECTION_SCORE = 0.99
FEATURE_DIM = 512


@dataclass(frozen=True)
class SynthObject:
    """One rendered rectangle: geometry, per-window velocity, class, tone.

    velocity is either a single (vx, vy, vz) applied to every window or a
    per-window list; vx/vy are pixels per frame, vz depth units per frame.
    Objects with tone_hz=None are silent props (context-only detections).
    """

    size: tuple
    position: tuple
    depth: float
    velocity: tuple
    label: int
    tone_hz: float | None = None

    def velocities(self, windows: int) -> np.ndarray:
        vel = np.asarray(self.velocity, dtype=float)
        if vel.ndim == 1:
            vel = np.tile(vel, (windows, 1))
        if vel.shape != (windows, 3):
            raise ValueError(
                f"velocity must be (3,) or ({windows}, 3), got {vel.shape}"
            )
        return vel


@dataclass(frozen=True)
class SynthSpec:
    """Everything needed to render one bundle deterministically."""

    seed: int
    image_size: tuple = (64, 64)
    frames: int = 48
    window_frames: int = tensorio.DEFAULT_WINDOW_FRAMES
    fps: float = 8.0
    objects: tuple = ()
    far_depth: float = 8.0
    noise_level: float = 0.0
    amplitude: float = 0.3
    clip_samples: int = audio_ops.DEFAULT_SAMPLES
    video_id: str = "synth"

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "image_size", tuple(self.image_size))

    @property
    def windows(self) -> int:
        return self.frames // self.window_frames

    @classmethod
    def from_json(cls, doc: dict) -> "SynthSpec":
        objects = tuple(
            SynthObject(
                size=tuple(o["size"]),
                position=tuple(o["position"]),
                depth=float(o["depth"]),
                velocity=tuple(tuple(v) for v in o["velocity"])
                if o["velocity"] and isinstance(o["velocity"][0], (list, tuple))
                else tuple(o["velocity"]),
                label=int(o["label"]),
                tone_hz=None if o.get("tone_hz") is None else float(o["tone_hz"]),
            )
            for o in doc["objects"]
        )
        known = {f.name for f in cls.__dataclass_fields__.values()}
        extra = {k: v for k, v in doc.items() if k in known and k != "objects"}
        if "image_size" in extra:
            extra["image_size"] = tuple(extra["image_size"])
        return cls(objects=objects, **extra)


def _positions(obj: SynthObject, spec: SynthSpec) -> np.ndarray:
    """Float (x, y, depth) of the object's top-left corner at every frame.

    Motion follows the window's velocity inside each full window and
    freezes on any trailing frames beyond the last window.
    """
    vel = obj.velocities(spec.windows)
    span = spec.window_frames
    pos = np.empty((spec.frames, 3))
    current = np.array([obj.position[0], obj.position[1], obj.depth], dtype=float)
    for f in range(spec.frames):
        pos[f] = current
        w = f // span
        if w < spec.windows and f + 1 < spec.frames:
            current = current + vel[min(w, spec.windows - 1)]
    return pos


def _box_at(obj: SynthObject, pos_row) -> tuple:
    x0 = int(np.round(pos_row[0]))
    y0 = int(np.round(pos_row[1]))
    return (x0, y0, x0 + int(obj.size[0]), y0 + int(obj.size[1]))


def validate_spec(spec: SynthSpec):
    """Reject specs whose objects leave the frame, exceed depth bounds, or alias."""
    height, width = spec.image_size
    if spec.frames < spec.window_frames:
        raise ValueError("spec must cover at least one full window")
    auditory = [o for o in spec.objects if o.tone_hz is not None]
    if not auditory:
        raise ValueError("spec needs at least one sounding object")
    if len(auditory) > 2:
        raise ValueError("at most two sounding objects are supported")
    labels = [o.label for o in auditory]
    if len(set(labels)) != len(labels):
        raise ValueError("sounding objects need distinct class labels")
    for obj in auditory:
        if obj.tone_hz >= NYQUIST * (1.0 - CHIRP_RATE * 8):
            raise ValueError(
                f"tone {obj.tone_hz} Hz too close to the {NYQUIST} Hz Nyquist limit"
            )
    for idx, obj in enumerate(spec.objects):
        pos = _positions(obj, spec)
        for f in range(spec.frames):
            x0, y0, x1, y1 = _box_at(obj, pos[f])
            if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
                raise ValueError(
                    f"object {idx} leaves the frame at frame {f}: box {(x0, y0, x1, y1)}"
                )
            if not 0 < pos[f, 2] < spec.far_depth:
                raise ValueError(
                    f"object {idx} depth {pos[f, 2]:.3f} outside (0, {spec.far_depth}) "
                    f"at frame {f}"
                )


def _render_depth(spec: SynthSpec, frame: int, positions) -> np.ndarray:
    height, width = spec.image_size
    depth = np.full((height, width), spec.far_depth, dtype=np.float32)
    order = sorted(range(len(spec.objects)), key=lambda i: -positions[i][frame, 2])
    for i in order:
        x0, y0, x1, y1 = _box_at(spec.objects[i], positions[i][frame])
        depth[y0:y1, x0:x1] = np.float32(positions[i][frame, 2])
    return depth


def _render_flow(spec: SynthSpec, window: int, positions) -> np.ndarray:
    height, width = spec.image_size
    flow = np.zeros((height, width, 2), dtype=np.float32)
    f_ref = window * spec.window_frames
    f_tgt = f_ref + spec.window_frames - 1
    order = sorted(range(len(spec.objects)), key=lambda i: -positions[i][f_ref, 2])
    for i in order:
        pos = positions[i]
        x0, y0, x1, y1 = _box_at(spec.objects[i], pos[f_ref])
        flow[y0:y1, x0:x1, 0] = np.float32(pos[f_tgt, 0] - pos[f_ref, 0])
        flow[y0:y1, x0:x1, 1] = np.float32(pos[f_tgt, 1] - pos[f_ref, 1])
    return flow


def _analytic_labels(spec: SynthSpec, positions, tau: float) -> list:
    """Ground-truth displacement records replaying the pipeline's float32 views."""
    height, width = spec.image_size
    auditory = [
        (i, obj) for i, obj in enumerate(spec.objects) if obj.tone_hz is not None
    ]
    boxes0 = {i: _box_at(obj, positions[i][0]) for i, obj in auditory}
    ranked = sorted(
        auditory,
        key=lambda pair: (-DETECTION_SCORE, pair[1].label, boxes0[pair[0]][0]),
    )
    labels = []
    for w in range(spec.windows):
        f_ref = w * spec.window_frames
        f_tgt = f_ref + spec.window_frames - 1
        far = np.float32(spec.far_depth)
        for slot, (i, _) in enumerate(ranked):
            pos = positions[i]
            dx = float(np.float32(pos[f_tgt, 0] - pos[f_ref, 0]))
            dy = float(np.float32(pos[f_tgt, 1] - pos[f_ref, 1]))
            z_ref = float(np.float32(pos[f_ref, 2])) / float(far)
            z_tgt = float(np.float32(pos[f_tgt, 2])) / float(far)
            vec = np.array([dx / (width - 1), dy / (height - 1), z_tgt - z_ref])
            labels.append(
                motion.DisplacementLabel(
                    slot, w, vec, motion.quantize10(vec, tau), motion.quantize28(vec, tau)
                )
            )
        labels.append(
            motion.DisplacementLabel(
                len(ranked),
                w,
                np.zeros(3),
                motion.quantize10(np.zeros(3), tau, is_background=True),
                motion.quantize28(np.zeros(3), tau, is_background=True),
            )
        )
    return labels


def gen_audio(spec: SynthSpec):
    """Per-object tone sources (slot order) and their mixture.

    Each source is a constant-amplitude tone whose instantaneous
    frequency drifts by CHIRP_RATE per second against the object's depth
    velocity within each 1 s window (approaching pitches up).  A trailing
    noise source is appended when noise_level > 0.
    """
    validate_spec(spec)
    rate = audio_ops.RATE
    t_total = spec.clip_samples
    auditory = [
        (i, obj) for i, obj in enumerate(spec.objects) if obj.tone_hz is not None
    ]
    positions = {i: _positions(obj, spec) for i, obj in auditory}
    boxes0 = {i: _box_at(obj, positions[i][0]) for i, obj in auditory}
    ranked = sorted(
        auditory,
        key=lambda pair: (-DETECTION_SCORE, pair[1].label, boxes0[pair[0]][0]),
    )

    sources = []
    for i, obj in ranked:
        vel = obj.velocities(spec.windows)
        sample_times = np.arange(t_total) / rate
        window_idx = np.minimum((sample_times).astype(int), spec.windows - 1)
        drift = -np.sign(vel[window_idx, 2]) * CHIRP_RATE * obj.tone_hz
        freq = obj.tone_hz + drift * (sample_times - window_idx)
        phase = 2.0 * np.pi * np.cumsum(freq) / rate
        sources.append(tensorio.AudioClip(spec.amplitude * np.sin(phase), rate))
    if spec.noise_level > 0:
        rng = np.random.default_rng(spec.seed + 1)
        sources.append(
            tensorio.AudioClip(
                spec.noise_level * rng.standard_normal(t_total), rate
            )
        )
    return sources, audio_ops.mix(sources)


def gen_scene(spec: SynthSpec, outdir, tau: float = motion.DEFAULT_TAU):
    """Render a complete bundle directory and return it loaded.

    Writes per-frame depth maps, per-window flow fields, detections with
    seeded features, audio sources and mixture, analytic ground-truth
    labels, and the manifest; identical specs produce byte-identical
    bundles.
    """
    validate_spec(spec)
    outdir = str(outdir)
    rng = np.random.default_rng(spec.seed)
    positions = [_positions(obj, spec) for obj in spec.objects]

    import os

    depth_rel = []
    for f in range(spec.frames):
        rel = f"depth/frame_{f:03d}.a3mp"
        tensorio.write_array(_render_depth(spec, f, positions), os.path.join(outdir, rel))
        depth_rel.append(rel)

    flow_rel = []
    for w in range(spec.windows):
        rel = f"flow/window_{w:02d}.a3mp"
        tensorio.write_array(_render_flow(spec, w, positions), os.path.join(outdir, rel))
        flow_rel.append(rel)

    features = {}
    for i, obj in enumerate(spec.objects):
        rel = f"feat/object_{i:02d}.a3mp"
        features[i] = rel
        tensorio.write_array(
            rng.standard_normal(FEATURE_DIM).astype(np.float32),
            os.path.join(outdir, rel),
        )

    det_windows = []
    for w in range(spec.windows):
        f_ref = w * spec.window_frames
        entries = []
        for i, obj in enumerate(spec.objects):
            entries.append(
                {
                    "label": obj.label,
                    "box": list(_box_at(obj, positions[i][f_ref])),
                    "score": DETECTION_SCORE,
                    "feature": features[i],
                }
            )
        det_windows.append(entries)
    tensorio.write_json({"windows": det_windows}, os.path.join(outdir, "detections.json"))

    sources, mixture = gen_audio(spec)
    source_rel = []
    for idx, clip in enumerate(sources):
        rel = f"audio/source_{idx:02d}.wav"
        tensorio.write_wav(clip, os.path.join(outdir, rel))
        source_rel.append(rel)
    tensorio.write_wav(mixture, os.path.join(outdir, "audio/mixture.wav"))

    labels = _analytic_labels(spec, positions, tau)
    tensorio.write_json(
        [label.to_json() for label in labels], os.path.join(outdir, "labels_true.json")
    )

    manifest = {
        "video_id": spec.video_id,
        "fps": spec.fps,
        "frames": spec.frames,
        "window_frames": spec.window_frames,
        "depth": depth_rel,
        "flow": flow_rel,
        "detections": "detections.json",
        "audio": {"mixture": "audio/mixture.wav", "sources": source_rel},
        "labels": "labels_true.json",
        "auditory_classes": sorted(
            {obj.label for obj in spec.objects if obj.tone_hz is not None}
        ),
    }
    tensorio.write_json(manifest, os.path.join(outdir, "manifest.json"))
    return tensorio.load_bundle(outdir)
