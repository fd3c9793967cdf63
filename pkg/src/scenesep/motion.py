"""Per-window 3D displacement labels: flow lifting, median pooling, quantization.

Displacements live in the same normalized coordinates as the point
clouds, so dx is pixels / (W - 1), dy pixels / (H - 1), and dz is a
difference of max-normalized pseudo-depths.  Two quantizers are provided:
an octant code (8 motion classes + no-motion + background = 10) and a
26-template cosine code (+ no-motion + background = 28).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

NO_MOTION_10 = 8
BACKGROUND_10 = 9
NO_MOTION_28 = 26
BACKGROUND_28 = 27
DEFAULT_TAU = 0.02


@dataclass(frozen=True)
class DisplacementLabel:
    """Median displacement of one node over one window, plus both class codes.

    node is the auditory slot (rank order, 0-based); the background node
    always gets slot = number of auditory nodes.
    """

    node: int
    window: int
    vector: np.ndarray
    class10: int
    class28: int

    def __post_init__(self):
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float).reshape(3))

    def to_json(self):
        return {
            "node": self.node,
            "window": self.window,
            "vector": [float(v) for v in self.vector],
            "class10": self.class10,
            "class28": self.class28,
        }


def lift_displacements(flow, box, depth_ref, depth_tgt) -> np.ndarray:
    """Per-pixel pseudo-3D displacement vectors for a detection box.

    Each pixel p inside the box moves to p' = p + flow(p), clamped to the
    image.  dx and dy are the clamped pixel motion in normalized image
    coordinates; dz = z_tgt(p') - z_ref(p) where both depth maps are
    normalized by their shared maximum and the endpoint is sampled at the
    nearest pixel.

    Returns an (n, 3) array, one row per box pixel.
    """
    flow = np.asarray(flow, dtype=float)
    depth_ref = np.asarray(depth_ref, dtype=float)
    depth_tgt = np.asarray(depth_tgt, dtype=float)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    if depth_ref.shape != flow.shape[:2] or depth_tgt.shape != flow.shape[:2]:
        raise ValueError("depth maps must match the flow field shape")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow field contains non-finite values")
    height, width = depth_ref.shape
    x0, y0, x1, y1 = (int(v) for v in box)
    if x0 >= x1 or y0 >= y1:
        raise ValueError(f"empty box {box}")
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
        raise ValueError(f"box {box} outside {width}x{height} image bounds")

    cgrid, rgrid = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
    cols = cgrid.ravel()
    rows = rgrid.ravel()
    cend = np.clip(cols + flow[rows, cols, 0], 0, width - 1)
    rend = np.clip(rows + flow[rows, cols, 1], 0, height - 1)

    zmax = max(depth_ref.max(), depth_tgt.max())
    if zmax > 0:
        z_ref = depth_ref[rows, cols] / zmax
        z_tgt = depth_tgt[np.round(rend).astype(int), np.round(cend).astype(int)] / zmax
    else:
        z_ref = np.zeros(len(rows))
        z_tgt = np.zeros(len(rows))

    dx = (cend - cols) / max(width - 1, 1)
    dy = (rend - rows) / max(height - 1, 1)
    return np.stack([dx, dy, z_tgt - z_ref], axis=1)


def median_displacement(vectors) -> np.ndarray:
    """Component-wise median of displacement vectors; empty input gives zero."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.size == 0:
        return np.zeros(3)
    return np.median(vectors.reshape(-1, 3), axis=0)


def direction_templates() -> np.ndarray:
    """The 26 unit directions of a cube: 6 faces, 12 edges, 8 corners.

    Templates are ordered face / edge / corner, lexicographically by
    (x, y, z) within each group, so template 0 is (-1, 0, 0).
    """
    raw = [v for v in product((-1, 0, 1), repeat=3) if v != (0, 0, 0)]
    raw.sort(key=lambda v: (sum(c != 0 for c in v), v))
    templates = np.asarray(raw, dtype=float)
    return templates / np.linalg.norm(templates, axis=1, keepdims=True)


_TEMPLATES = direction_templates()


def quantize10(d, tau: float = DEFAULT_TAU, is_background: bool = False) -> int:
    """Octant code of a displacement: bit 1 for x >= 0, 2 for y >= 0, 4 for z >= 0.

    Vectors shorter than tau map to the no-motion class (8); background
    nodes always map to class 9.  Zero components count as positive.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if is_background:
        return BACKGROUND_10
    d = np.asarray(d, dtype=float).reshape(3)
    if np.linalg.norm(d) < tau:
        return NO_MOTION_10
    return int((d[0] >= 0) + 2 * (d[1] >= 0) + 4 * (d[2] >= 0))


def quantize28(d, tau: float = DEFAULT_TAU, is_background: bool = False) -> int:
    """Nearest cube-direction class by cosine similarity (ties: lowest index).

    Classes 0-25 are the direction_templates entries; 26 is no-motion
    (norm below tau) and 27 the background class.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if is_background:
        return BACKGROUND_28
    d = np.asarray(d, dtype=float).reshape(3)
    norm = np.linalg.norm(d)
    if norm < tau:
        return NO_MOTION_28
    return int(np.argmax(_TEMPLATES @ (d / norm)))


def window_labels(bundle, graphs, tau: float = DEFAULT_TAU):
    """Displacement labels for every (auditory node, window) plus background rows.

    graphs may be a single SceneGraph (reused for all windows) or one per
    window.  Window w spans frames [w*l, (w+1)*l); the flow field maps its
    first frame onto its last, so depths are sampled at those two frames.
    """
    span = bundle.window_frames
    if isinstance(graphs, (list, tuple)):
        if len(graphs) != bundle.windows:
            raise ValueError(
                f"got {len(graphs)} graphs for {bundle.windows} windows"
            )
        per_window = list(graphs)
    else:
        per_window = [graphs] * bundle.windows

    labels = []
    for w in range(bundle.windows):
        graph = per_window[w]
        flow = bundle.flow[w]
        depth_ref = bundle.depth[w * span]
        depth_tgt = bundle.depth[w * span + span - 1]
        for slot, node_id in enumerate(graph.auditory_index):
            box = graph.nodes[node_id].detection.box
            med = median_displacement(lift_displacements(flow, box, depth_ref, depth_tgt))
            labels.append(
                DisplacementLabel(slot, w, med, quantize10(med, tau), quantize28(med, tau))
            )
        bg_box = graph.nodes[graph.background_index].detection.box
        med = median_displacement(lift_displacements(flow, bg_box, depth_ref, depth_tgt))
        labels.append(
            DisplacementLabel(
                len(graph.auditory_index),
                w,
                med,
                quantize10(med, tau, is_background=True),
                quantize28(med, tau, is_background=True),
            )
        )
    return labels
