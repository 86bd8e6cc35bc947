"""Bone extraction and 3D model construction.

Slice-wise: Gaussian smoothing, 1D K-means over pixel intensities with the
brightest cluster kept, morphological closing plus hole filling.  The
stacked mask then gets a volumetric closing with a spherical structuring
element, small floating artifacts are dropped, and the surface is meshed
with marching cubes and relaxed by Taubin smoothing.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from skimage import measure

from .types import BinaryMask, TriMesh, Volume

log = logging.getLogger(__name__)

_CONN26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class BoneMeshConfig:
    gaussian_sigma: float = 2.0
    kmeans_k: int = 5
    closing_radius_2d: int = 3
    volumetric_radius: int = 3
    min_component_voxels: int = 100
    taubin_lambda: float = 0.5
    taubin_mu: float = -0.53
    taubin_iterations: int = 10
    kmeans_seed: int = 0

    def __post_init__(self):
        if self.kmeans_k < 2:
            raise ValueError("kmeans_k must be >= 2")
        if self.closing_radius_2d < 1 or self.volumetric_radius < 1:
            raise ValueError("closing radii must be >= 1")
        if not (self.taubin_lambda > 0 > self.taubin_mu):
            raise ValueError("taubin requires lambda > 0 > mu")
        if abs(self.taubin_mu) <= self.taubin_lambda:
            raise ValueError("taubin requires |mu| > lambda")


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at radius ceil(3*sigma), normalized to 1."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_filter(slice2d: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution with reflect-padded borders."""
    k = gaussian_kernel1d(sigma)
    arr = np.asarray(slice2d, dtype=np.float64)
    arr = ndimage.convolve1d(arr, k, axis=0, mode="reflect")
    return ndimage.convolve1d(arr, k, axis=1, mode="reflect")


def _kmeanspp_init(values: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty(k, dtype=np.float64)
    centers[0] = values[rng.integers(0, len(values))]
    d2 = (values - centers[0]) ** 2
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining mass sits on chosen centers; spread over distinct values
            centers[i] = values[rng.integers(0, len(values))]
            continue
        probs = d2 / total
        centers[i] = values[rng.choice(len(values), p=probs)]
        d2 = np.minimum(d2, (values - centers[i]) ** 2)
    return centers


def _lloyd(values: np.ndarray, centers: np.ndarray, tol: float = 1e-6, max_iter: int = 300):
    k = len(centers)
    centers = np.sort(centers)
    for _ in range(max_iter):
        # 1D assignment: nearest center == interval between midpoints
        cuts = (centers[1:] + centers[:-1]) / 2.0
        labels = np.searchsorted(cuts, values)
        sums = np.bincount(labels, weights=values, minlength=k)
        counts = np.bincount(labels, minlength=k)
        new_centers = centers.copy()
        nonempty = counts > 0
        new_centers[nonempty] = sums[nonempty] / counts[nonempty]
        if not nonempty.all():
            # relocate empty clusters to the points farthest from their center
            dist = (values - new_centers[labels]) ** 2
            order = np.argsort(-dist, kind="stable")
            for idx, c in zip(order, np.nonzero(~nonempty)[0]):
                new_centers[c] = values[idx]
        new_centers = np.sort(new_centers)
        move = np.max(np.abs(new_centers - centers))
        centers = new_centers
        if move < tol:
            break
    cuts = (centers[1:] + centers[:-1]) / 2.0
    labels = np.searchsorted(cuts, values)
    sse = float(np.sum((values - centers[labels]) ** 2))
    return centers, labels, sse


# Above this many samples the exact dynamic program is replaced by seeded
# Lloyd restarts; image slices always take the fast path.
_EXACT_DP_LIMIT = 512


def _kmeans_exact_sorted(sorted_vals: np.ndarray, k: int) -> np.ndarray:
    """Optimal 1D clustering of sorted values by dynamic programming.

    Optimal clusters are contiguous in sorted order; minimize total
    within-cluster SSE over all split points.  Returns the k+1 block
    boundaries into the sorted array.
    """
    n = len(sorted_vals)
    s1 = np.concatenate([[0.0], np.cumsum(sorted_vals)])
    s2 = np.concatenate([[0.0], np.cumsum(sorted_vals**2)])

    def block_cost(i: np.ndarray, j: int) -> np.ndarray:
        # SSE of sorted_vals[i:j] for a vector of start indices i
        cnt = j - i
        total = s1[j] - s1[i]
        return (s2[j] - s2[i]) - total * total / cnt

    dp = np.full((k + 1, n + 1), np.inf)
    arg = np.zeros((k + 1, n + 1), dtype=np.intp)
    dp[0, 0] = 0.0
    for m in range(1, k + 1):
        for j in range(m, n - (k - m) + 1):
            starts = np.arange(m - 1, j)
            cand = dp[m - 1, starts] + block_cost(starts, j)
            pick = int(np.argmin(cand))
            dp[m, j] = cand[pick]
            arg[m, j] = starts[pick]
    bounds = [n]
    for m in range(k, 0, -1):
        bounds.append(int(arg[m, bounds[-1]]))
    return np.array(bounds[::-1])


def kmeans_1d(
    values: np.ndarray, k: int, seed: int = 0, n_init: int = 8
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded 1D K-means returning (ascending centers, labels).

    Small inputs are solved exactly by dynamic programming over the
    sorted order, guaranteeing the SSE-optimal clustering.  Larger inputs
    use deterministic restarts of k-means++ plus a quantile start, each
    refined by Lloyd iterations until center movement falls below 1e-6
    (or 300 iterations).  Requires at least k distinct values.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    distinct = np.unique(values)
    if len(distinct) < k:
        raise ValueError(f"need at least {k} distinct values, got {len(distinct)}")
    if k == 1:
        return np.array([values.mean()]), np.zeros(len(values), dtype=np.intp)

    if len(values) <= _EXACT_DP_LIMIT:
        order = np.argsort(values, kind="stable")
        sorted_vals = values[order]
        bounds = _kmeans_exact_sorted(sorted_vals, k)
        centers = np.array(
            [sorted_vals[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])]
        )
        sorted_labels = np.repeat(np.arange(k), np.diff(bounds))
        labels = np.empty(len(values), dtype=np.intp)
        labels[order] = sorted_labels
        return centers, labels

    best = None
    qs = (np.arange(k) + 0.5) / k
    inits = [np.quantile(values, qs)]
    for restart in range(n_init):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([seed & (2**63 - 1), restart]))
        )
        inits.append(_kmeanspp_init(distinct, k, rng))
    for init in inits:
        centers, labels, sse = _lloyd(values, init)
        if best is None or sse < best[2] - 1e-12:
            best = (centers, labels, sse)
    centers, labels, _ = best
    return centers, labels


def brightest_cluster_mask(slice2d: np.ndarray, cfg: BoneMeshConfig, seed: int | None = None) -> np.ndarray:
    """Pixels assigned to the brightest K-means intensity cluster.

    A constant slice yields an empty mask with a warning; slices with
    fewer distinct values than k collapse k to the distinct-value count.
    """
    arr = np.asarray(slice2d, dtype=np.float64)
    distinct = np.unique(arr)
    if len(distinct) < 2:
        log.warning("constant slice: brightest-cluster mask is empty")
        return np.zeros(arr.shape, dtype=bool)
    k = min(cfg.kmeans_k, len(distinct))
    centers, labels = kmeans_1d(arr.ravel(), k, seed=cfg.kmeans_seed if seed is None else seed)
    return (labels == len(centers) - 1).reshape(arr.shape)


def _ball_closing(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary closing with the Euclidean ball {offsets: |o|^2 <= r^2}.

    Computed through exact squared distance transforms; padding by r+1
    emulates the infinite domain, so the closing is extensive and
    idempotent on the window.
    """
    pad = radius + 1
    padded = np.pad(mask, pad)
    r2 = float(radius * radius)
    d2 = ndimage.distance_transform_edt(~padded) ** 2
    dilated = d2 < r2 + 0.5
    e2 = ndimage.distance_transform_edt(dilated) ** 2
    eroded = e2 > r2 + 0.5
    inner = tuple(slice(pad, -pad) for _ in range(mask.ndim))
    return eroded[inner]


def close_and_fill(mask2d: np.ndarray, radius: int) -> np.ndarray:
    """Disk closing followed by filling of enclosed holes."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    mask2d = np.asarray(mask2d, dtype=bool)
    if not mask2d.any():
        return mask2d.copy()
    closed = _ball_closing(mask2d, radius)
    return ndimage.binary_fill_holes(closed)


def volumetric_close(mask3d: BinaryMask, radius: int = 3) -> BinaryMask:
    """3D binary closing with a spherical structuring element."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if not mask3d.data.any():
        return BinaryMask(mask3d.data.copy())
    return BinaryMask(_ball_closing(mask3d.data, radius))


def remove_small_components(mask3d: BinaryMask, min_voxels: int) -> BinaryMask:
    """Drop 26-connected components with fewer than min_voxels voxels."""
    if min_voxels < 0:
        raise ValueError("min_voxels must be >= 0")
    labels, n = ndimage.label(mask3d.data, structure=_CONN26)
    if n == 0 or min_voxels == 0:
        return BinaryMask(mask3d.data.copy())
    counts = np.bincount(labels.ravel())
    keep = counts >= min_voxels
    keep[0] = False
    return BinaryMask(keep[labels])


def extract_isosurface(mask3d: BinaryMask, spacing=(1.0, 1.0, 1.0)) -> TriMesh:
    """Marching cubes over the 0.5 level of the binary field.

    The mask is padded by one empty layer so boundary-touching foreground
    still produces a closed surface.  Vertex coordinates are voxel-center
    positions scaled by spacing, in (x, y, z) millimeter order.
    """
    if not mask3d.data.any():
        raise ValueError("empty mask: no isosurface to extract")
    padded = np.pad(mask3d.data, 1).astype(np.float32)
    verts, faces, _, _ = measure.marching_cubes(padded, level=0.5, method="lorensen")
    verts = verts - 1.0  # undo the pad offset
    sx, sy, sz = spacing
    verts_mm = np.column_stack([verts[:, 2] * sx, verts[:, 1] * sy, verts[:, 0] * sz])
    return TriMesh(verts_mm, faces.astype(np.int64))


def _umbrella_matrix(n_vertices: int, faces: np.ndarray) -> sparse.csr_matrix:
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n_vertices, n_vertices)
    )
    degree = np.asarray(adj.sum(axis=1)).ravel()
    isolated = degree == 0
    inv = np.where(isolated, 0.0, 1.0 / np.maximum(degree, 1.0))
    weight = sparse.diags(inv) @ adj
    if isolated.any():
        # isolated vertices average to themselves so smoothing leaves them fixed
        weight = weight + sparse.diags(isolated.astype(np.float64))
    return weight.tocsr()


def taubin_smooth(mesh: TriMesh, lam: float = 0.5, mu: float = -0.53, iterations: int = 10) -> TriMesh:
    """Shrinkage-compensated Laplacian smoothing (uniform umbrella weights).

    Each iteration applies a positive step of factor ``lam`` then a
    negative step of factor ``mu``; connectivity, vertex and face counts
    are untouched.
    """
    if not (lam > 0 > mu):
        raise ValueError("taubin requires lam > 0 > mu")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0 or mesh.n_vertices == 0:
        return TriMesh(mesh.vertices, mesh.faces, mesh.boxes)
    weight = _umbrella_matrix(mesh.n_vertices, mesh.faces)
    verts = mesh.vertices.copy()
    for _ in range(iterations):
        verts = verts + lam * (weight @ verts - verts)
        verts = verts + mu * (weight @ verts - verts)
    return TriMesh(verts, mesh.faces, mesh.boxes)


def mesh_component_count(mesh: TriMesh) -> int:
    """Number of connected components in the mesh graph (vertices + edges)."""
    weight = _umbrella_matrix(mesh.n_vertices, mesh.faces)
    n, _ = sparse.csgraph.connected_components(weight, directed=False)
    return int(n)


def build_bone_model(roi: Volume, cfg: BoneMeshConfig | None = None) -> tuple[TriMesh, BinaryMask]:
    """Full bone pipeline for one ROI volume: slice-wise extraction, 3D
    cleanup, isosurface and smoothing.  Raises if no bone voxels survive.
    """
    cfg = cfg or BoneMeshConfig()
    nz = roi.n_slices
    stack = np.zeros(roi.data.shape, dtype=bool)
    for z in range(nz):
        smoothed = gaussian_filter(roi.data[z], cfg.gaussian_sigma)
        seed = int(
            np.random.SeedSequence([cfg.kmeans_seed & (2**63 - 1), z]).generate_state(1)[0]
        )
        mask = brightest_cluster_mask(smoothed, cfg, seed=seed)
        if mask.any():
            mask = close_and_fill(mask, cfg.closing_radius_2d)
        stack[z] = mask

    mask3d = volumetric_close(BinaryMask(stack), cfg.volumetric_radius)
    mask3d = remove_small_components(mask3d, cfg.min_component_voxels)
    if not mask3d.data.any():
        raise ValueError("no bone found: bone mask is empty after cleanup")
    mesh = extract_isosurface(mask3d, spacing=roi.spacing)
    mesh = taubin_smooth(mesh, cfg.taubin_lambda, cfg.taubin_mu, cfg.taubin_iterations)
    return mesh, mask3d
