"""Pseudo-3D point clouds, similarity ICP, Chamfer distances, and RBF graph edges.

Points live in a normalized cube: x = column / (width - 1), y = row /
(height - 1), z = depth / max frame depth, so every coordinate is in
[0, 1] and all distances are unitless.  Boxes follow the half-open pixel
convention (x0, y0, x1, y1) with x1/y1 exclusive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class PointCloud:
    """A set of pseudo-3D points backing one detection box.

    points is an (n, 3) float array of (x, y, z) rows; source_box
    identifies the detection the cloud was lifted from.
    """

    points: np.ndarray
    source_box: object = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"point cloud must be (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class SimilarityTransform:
    """Rotation + isotropic scale + translation: p' = scale * R @ p + t.

    flag is None for a regular estimate, "degenerate" when a cloud had
    fewer than 3 points, or "rank-deficient" when a cloud was collinear;
    flagged transforms are the identity.
    """

    rotation: np.ndarray
    scale: float
    translation: np.ndarray
    flag: str | None = None

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        tra = np.asarray(self.translation, dtype=float).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if np.abs(rot.T @ rot - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("rotation determinant is not +1")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls, flag=None):
        return cls(np.eye(3), 1.0, np.zeros(3), flag=flag)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        inv_rot = self.rotation.T
        return SimilarityTransform(
            inv_rot, inv_scale, -inv_scale * inv_rot @ self.translation, flag=self.flag
        )


def _check_box(box, height, width):
    x0, y0, x1, y1 = (int(v) for v in box)
    if x0 >= x1 or y0 >= y1:
        raise ValueError(f"empty box {box}")
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
        raise ValueError(f"box {box} outside {width}x{height} image bounds")
    return x0, y0, x1, y1


def backproject(depth: np.ndarray, box, stride: int = 1) -> PointCloud:
    """Lift the pixels of a detection box into a pseudo-3D point cloud.

    Parameters
    ----------
    depth : (H, W) array
        Per-pixel pseudo-depth for the frame; must be finite.
    box : (x0, y0, x1, y1)
        Half-open pixel rectangle within the image.
    stride : int
        Subsampling step over rows and columns (1 keeps every pixel).

    Returns
    -------
    PointCloud with x = col/(W-1), y = row/(H-1) and z = depth divided by
    the maximum depth of the whole frame (all-zero frames map to z = 0).
    """
    depth = np.asarray(depth, dtype=float)
    if depth.ndim != 2:
        raise ValueError(f"depth must be 2-D, got shape {depth.shape}")
    if not np.all(np.isfinite(depth)):
        raise ValueError("depth map contains non-finite values")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    height, width = depth.shape
    x0, y0, x1, y1 = _check_box(box, height, width)

    rows = np.arange(y0, y1, stride)
    cols = np.arange(x0, x1, stride)
    cgrid, rgrid = np.meshgrid(cols, rows)
    zmax = depth.max()
    z = depth[rgrid, cgrid] / zmax if zmax > 0 else np.zeros_like(rgrid, dtype=float)
    x = cgrid / max(width - 1, 1)
    y = rgrid / max(height - 1, 1)
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    return PointCloud(pts, source_box=tuple(box))


def _nearest_distances(a: np.ndarray, b: np.ndarray, chunk: int = 2048):
    """For each row of a, Euclidean distance to (and index of) its nearest row of b."""
    dists = np.empty(len(a))
    idx = np.empty(len(a), dtype=int)
    for start in range(0, len(a), chunk):
        block = a[start : start + chunk]
        d2 = ((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        idx[start : start + len(block)] = d2.argmin(axis=1)
        dists[start : start + len(block)] = np.sqrt(d2.min(axis=1))
    return dists, idx


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Symmetrized Chamfer distance between two point clouds.

    Average of the two directed mean nearest-neighbor distances, so the
    value does not scale with cloud size and is zero iff the clouds have
    identical support.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer requires non-empty clouds")
    d_ab, _ = _nearest_distances(a.points, b.points)
    d_ba, _ = _nearest_distances(b.points, a.points)
    return 0.5 * (d_ab.mean() + d_ba.mean())


def _umeyama(src: np.ndarray, dst: np.ndarray):
    """Closed-form least-squares similarity (scale, R, t) mapping src onto dst."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s) / len(src)
    u, d, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[-1, -1] = -1.0
    var_s = ((src - mu_s) ** 2).sum(axis=1).mean()
    scale = np.trace(np.diag(d) @ s) / var_s
    rot = u @ s @ vt
    return scale, rot, mu_d - scale * rot @ mu_s


def _principal_axes(points: np.ndarray) -> np.ndarray:
    """Right-singular vectors of the centered cloud, columns ordered by variance."""
    _, _, vt = np.linalg.svd(points - points.mean(axis=0), full_matrices=False)
    return vt.T


def _cloud_rank(points: np.ndarray) -> int:
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int((sv > 1e-9 * sv[0]).sum())


def _run_icp(src, ref, scale0, rot0, tra0, max_iters, tol):
    scale, rot, tra = scale0, rot0, tra0
    prev = np.inf
    residual = np.inf
    for _ in range(max_iters):
        moved = scale * src @ rot.T + tra
        _, idx = _nearest_distances(moved, ref)
        paired = ref[idx]
        residual = np.linalg.norm(moved - paired, axis=1).mean()
        if abs(prev - residual) < tol:
            break
        prev = residual
        scale, rot, tra = _umeyama(src, paired)
    return residual, scale, rot, tra


def icp_align(
    src: PointCloud, ref: PointCloud, max_iters: int = 64, tol: float = 1e-12
) -> SimilarityTransform:
    """Estimate the similarity transform aligning src onto ref via ICP.

    Each iteration pairs every src point with its nearest ref point
    (exhaustive search; clouds are small) and re-fits the closed-form
    least-squares similarity on the pairs, stopping once the mean pairing
    residual changes by less than tol.  Because nearest-neighbor ICP only
    converges locally, the iteration is restarted from the identity and
    from the four proper principal-axis alignments of the two clouds, and
    the lowest-residual result wins; on noise-free similarity-transformed
    clouds this recovers the transform to machine precision.

    Degenerate inputs do not raise: fewer than 3 points in either cloud
    yields the identity flagged "degenerate", a collinear cloud yields the
    identity flagged "rank-deficient".
    """
    a, b = src.points, ref.points
    if len(a) < 3 or len(b) < 3:
        return SimilarityTransform.identity(flag="degenerate")
    if _cloud_rank(a) < 2 or _cloud_rank(b) < 2:
        return SimilarityTransform.identity(flag="rank-deficient")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    spread_a = np.sqrt(((a - mu_a) ** 2).sum(axis=1).mean())
    spread_b = np.sqrt(((b - mu_b) ** 2).sum(axis=1).mean())
    scale0 = spread_b / spread_a if spread_a > 0 else 1.0

    axes_a = _principal_axes(a)
    axes_b = _principal_axes(b)
    candidates = [np.eye(3)]
    for signs in ([1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]):
        rot = axes_b @ np.diag(signs) @ axes_a.T
        if np.linalg.det(rot) < 0:
            rot = axes_b @ np.diag([-s for s in signs]) @ axes_a.T
        candidates.append(rot)

    best = None
    for rot0 in candidates:
        tra0 = mu_b - scale0 * rot0 @ mu_a
        result = _run_icp(a, b, scale0, rot0, tra0, max_iters, tol)
        if best is None or result[0] < best[0]:
            best = result
    _, scale, rot, tra = best
    return SimilarityTransform(rot, scale, tra)


def apply_transform(transform: SimilarityTransform, cloud: PointCloud) -> PointCloud:
    """Map every point of a cloud through p' = scale * R @ p + t."""
    return PointCloud(transform.apply(cloud.points), source_box=cloud.source_box)


def _check_distance_matrix(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError(f"distance matrix must be square, got {dist.shape}")
    if np.abs(dist - dist.T).max() > 1e-12:
        raise ValueError("distance matrix is not symmetric")
    if np.abs(np.diag(dist)).max() != 0:
        raise ValueError("distance matrix diagonal must be zero")
    return dist


def pairwise_chamfer(clouds) -> np.ndarray:
    """Normalized symmetric Chamfer distance matrix over a list of clouds.

    The raw pairwise matrix is divided by its maximum off-diagonal entry
    so all distances land in [0, 1]; an all-zero matrix (identical clouds)
    is returned unscaled.  Diagonal is zero.
    """
    n = len(clouds)
    if n < 2:
        raise ValueError("pairwise_chamfer requires at least 2 clouds")
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = chamfer(clouds[i], clouds[j])
    peak = dist.max()
    if peak > 0:
        dist = dist / peak
    return dist


def _offdiag(matrix: np.ndarray) -> np.ndarray:
    """Upper-triangle off-diagonal entries; one value per unordered pair."""
    iu = np.triu_indices(matrix.shape[0], k=1)
    return matrix[iu]


def _nearest_rank(values: np.ndarray, percentile: float) -> float:
    ordered = np.sort(values)
    k = int(np.ceil(percentile / 100.0 * len(ordered)))
    return float(ordered[max(k, 1) - 1])


def rbf_adjacency(dist: np.ndarray, percentile: float = 25.0) -> np.ndarray:
    """Edge weights w_ij = exp(-D_ij / sigma^2) from a normalized distance matrix.

    sigma is the nearest-rank percentile of the off-diagonal entries
    (each unordered pair counted once).  sigma = 0 degenerates to an
    indicator: weight 1 where D = 0, weight 0 elsewhere.
    """
    dist = _check_distance_matrix(dist)
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile must be in (0, 100], got {percentile}")
    sigma = _nearest_rank(_offdiag(dist), percentile)
    if sigma == 0:
        return (dist == 0).astype(float)
    return np.exp(-dist / sigma**2)


def multiscale_adjacency(dist: np.ndarray):
    """Two binary graphs thresholding distances at the median and the maximum.

    Returns (median_graph, full_graph); ties at the threshold keep the
    edge, so the second graph is always fully connected and the first is
    a subgraph of it.
    """
    dist = _check_distance_matrix(dist)
    off = _offdiag(dist)
    return (
        (dist <= np.median(off)).astype(float),
        (dist <= off.max()).astype(float),
    )


def sparsity(adjacency: np.ndarray, eps: float = 1e-5) -> float:
    """Fraction of off-diagonal edge weights below eps (discardable edges)."""
    adjacency = np.asarray(adjacency, dtype=float)
    n = adjacency.shape[0]
    mask = ~np.eye(n, dtype=bool)
    return float((adjacency[mask] < eps).mean())
