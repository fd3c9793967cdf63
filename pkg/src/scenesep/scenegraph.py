"""Scene-graph assembly: auditory nodes, IoU-gated context nodes, background node.

Node order inside a graph is fixed: auditory nodes first (rank order),
then deduplicated context nodes, then the single background node last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry

AUDITORY = "auditory"
CONTEXT = "context"
BACKGROUND = "background"

BACKGROUND_LABEL = -1
MAX_AUDITORY = 2
MAX_CONTEXT = 20
FEATURE_DIM = 512


@dataclass(frozen=True)
class Detection:
    """One detector output: class label, pixel box, appearance feature, confidence."""

    label: int
    box: tuple
    score: float
    feature: np.ndarray

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if x0 >= x1 or y0 >= y1:
            raise ValueError(f"detection box {self.box} has non-positive area")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")
        feat = np.asarray(self.feature, dtype=float).reshape(-1)
        if not np.all(np.isfinite(feat)):
            raise ValueError("detection feature contains non-finite values")
        object.__setattr__(self, "box", tuple(int(v) for v in self.box))
        object.__setattr__(self, "feature", feat)


@dataclass(frozen=True)
class GraphNode:
    detection: Detection
    kind: str
    cloud: geometry.PointCloud


@dataclass(frozen=True)
class SceneGraph:
    """Nodes plus the RBF-weighted adjacency; auditory_index lists the sounding nodes."""

    nodes: tuple
    adjacency: np.ndarray
    auditory_index: tuple

    def __post_init__(self):
        kinds = [node.kind for node in self.nodes]
        if not self.auditory_index or any(
            kinds[i] != AUDITORY for i in self.auditory_index
        ):
            raise ValueError("scene graph needs at least one auditory node")
        if kinds.count(BACKGROUND) != 1:
            raise ValueError("scene graph needs exactly one background node")
        adj = np.asarray(self.adjacency, dtype=float)
        if adj.shape != (len(self.nodes), len(self.nodes)):
            raise ValueError(
                f"adjacency shape {adj.shape} does not match {len(self.nodes)} nodes"
            )
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "auditory_index", tuple(self.auditory_index))

    @property
    def background_index(self) -> int:
        return next(i for i, n in enumerate(self.nodes) if n.kind == BACKGROUND)

    def features(self) -> np.ndarray:
        return np.stack([node.detection.feature for node in self.nodes])


def iou(a, b) -> float:
    """Intersection over union of two half-open pixel rectangles."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    if area_a <= 0 or area_b <= 0:
        raise ValueError("iou requires rectangles with positive area")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = max(iw, 0) * max(ih, 0)
    return inter / (area_a + area_b - inter)


def auditory_rank_key(det: Detection):
    """Sort key ordering auditory detections: score desc, class id asc, left edge asc."""
    return (-det.score, det.label, det.box[0])


def select_context(auditory: Detection, candidates, gamma: float):
    """Context detections overlapping an auditory box with IoU strictly above gamma.

    Candidates are expected to be non-auditory detections (the caller
    filters by catalog); at most MAX_CONTEXT survive, by descending score.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    hits = [c for c in candidates if c is not auditory and iou(auditory.box, c.box) > gamma]
    hits.sort(key=lambda d: -d.score)
    return hits[:MAX_CONTEXT]


def _background_crop(image_shape, boxes, rng):
    """A quarter-area crop with zero IoU against every box, or the freest corner."""
    height, width = image_shape
    ch, cw = height // 2, width // 2
    for _ in range(64):
        x0 = int(rng.integers(0, width - cw + 1))
        y0 = int(rng.integers(0, height - ch + 1))
        crop = (x0, y0, x0 + cw, y0 + ch)
        if all(iou(crop, box) == 0.0 for box in boxes):
            return crop
    corners = [
        (0, 0, cw, ch),
        (width - cw, 0, width, ch),
        (0, height - ch, cw, height),
        (width - cw, height - ch, width, height),
    ]
    return min(corners, key=lambda crop: max(iou(crop, box) for box in boxes))


def build_graph(
    detections,
    auditory_catalog,
    depth_frame: np.ndarray,
    gamma: float = 0.1,
    background_feature: np.ndarray | None = None,
    percentile: float = 25.0,
    stride: int = 1,
    seed: int = 0,
) -> SceneGraph:
    """Assemble the scene graph for one frame's detections.

    Keeps the top-MAX_AUDITORY auditory detections (by auditory_rank_key),
    attaches IoU-gated context nodes to each (shared context deduplicated),
    and appends one background node whose cloud comes from a seeded
    quarter-area crop that overlaps no detection.  Point clouds are lifted
    with geometry.backproject and edges come from the normalized pairwise
    Chamfer matrix through the RBF kernel at the given percentile.
    """
    catalog = set(auditory_catalog)
    auditory = sorted(
        (d for d in detections if d.label in catalog), key=auditory_rank_key
    )[:MAX_AUDITORY]
    if not auditory:
        raise ValueError("no auditory object among the detections")
    others = [d for d in detections if d.label not in catalog]

    picked = list(auditory)
    seen = {id(d) for d in picked}
    for anchor in auditory:
        for ctx in select_context(anchor, others, gamma):
            if id(ctx) not in seen:
                seen.add(id(ctx))
                picked.append(ctx)

    rng = np.random.default_rng(seed)
    crop = _background_crop(depth_frame.shape, [d.box for d in detections], rng)
    if background_feature is None:
        background_feature = rng.standard_normal(FEATURE_DIM)
    background = Detection(
        label=BACKGROUND_LABEL, box=crop, score=1.0, feature=background_feature
    )

    nodes = []
    for det in picked:
        kind = AUDITORY if det.label in catalog else CONTEXT
        nodes.append(GraphNode(det, kind, geometry.backproject(depth_frame, det.box, stride)))
    nodes.append(
        GraphNode(background, BACKGROUND, geometry.backproject(depth_frame, crop, stride))
    )

    dist = geometry.pairwise_chamfer([node.cloud for node in nodes])
    adjacency = geometry.rbf_adjacency(dist, percentile)
    return SceneGraph(
        nodes=tuple(nodes),
        adjacency=adjacency,
        auditory_index=tuple(range(len(auditory))),
    )
