"""NDVI season imaging: block approximation, clipped differencing, variance
mapping, Gaussian smoothing and 1-D K-means sectoring.

Images are 2-D float arrays indexed ``[row, col]`` with intensities in
[0, 1]. Every function here is pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

DIFF_CLIP_MODES = ("neg", "pos")


def as_gray(img, name: str = "image") -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} intensities must lie in [0, 1]")
    return arr


def approximate(img, p: int) -> np.ndarray:
    """Average each p x p block; edge blocks average only the pixels they hold."""
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise ValueError(f"block size p must be a positive integer, got {p!r}")
    arr = as_gray(img)
    if p == 1:
        return arr.copy()
    h, w = arr.shape
    rows = np.arange(0, h, p)
    cols = np.arange(0, w, p)
    sums = np.add.reduceat(np.add.reduceat(arr, rows, axis=0), cols, axis=1)
    row_n = np.diff(np.append(rows, h))
    col_n = np.diff(np.append(cols, w))
    return sums / np.outer(row_n, col_n)


def approximate_mask(mask, p: int) -> np.ndarray:
    """Cell is in-field when at least half of its source pixels are."""
    m = np.asarray(mask, dtype=np.float64)
    return approximate((m > 0).astype(np.float64), p) >= 0.5


def diff(a, b, p: int, clip: str = "neg") -> np.ndarray:
    """Clipped difference of two aligned captures, ``a`` earlier than ``b``.

    ``clip="neg"`` keeps ``min(a - b, 0)``, cells where the later capture is
    brighter. ``clip="pos"`` keeps ``min(b - a, 0)``, cells that lost index.
    """
    a = as_gray(a, "a")
    b = as_gray(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if clip not in DIFF_CLIP_MODES:
        raise ValueError(f"clip must be one of {DIFF_CLIP_MODES}, got {clip!r}")
    ca, cb = approximate(a, p), approximate(b, p)
    delta = ca - cb if clip == "neg" else cb - ca
    return np.minimum(delta, 0.0)


def variance_map(diffs, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Per-cell population variance over a list of diff matrices, max-normalised.

    With fewer than two diffs the map is all zeros; ``shape`` gives its size
    when the list is empty.
    """
    diffs = [np.asarray(d, dtype=np.float64) for d in diffs]
    if not diffs:
        if shape is None:
            raise ValueError("shape is required for an empty diff list")
        return np.zeros(shape)
    first = diffs[0].shape
    if any(d.shape != first for d in diffs) or (shape is not None and tuple(shape) != first):
        raise ValueError("all diff matrices must share dimensions")
    if len(diffs) < 2:
        return np.zeros(first)
    v = np.var(np.stack(diffs), axis=0)
    top = v.max()
    if top > 0:
        v = v / top
    return v


def gaussian_kernel(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian, truncated at ceil(3 sigma), clamp-to-edge borders."""
    kernel = gaussian_kernel(sigma)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("expected a non-empty 2-D image")
    out = ndimage.correlate1d(arr, kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(out, kernel, axis=1, mode="nearest")


# --- K-means ---------------------------------------------------------------

def _assign(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin returns the lowest index on ties
    return np.argmin(np.abs(values[:, None] - centroids[None, :]), axis=1)


def _sse(values: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(np.sum((values - centroids[labels]) ** 2))


def lloyd_1d(values, centroids, tol: float = 1e-9, max_iter: int = 100,
             rng: np.random.Generator | None = None):
    """Lloyd iterations on scalars.

    Returns ``(labels, centroids, sse_history)`` where ``sse_history[t]`` is
    the within-cluster sum of squares after the t-th assignment step.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    cents = np.array(centroids, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(0)
    history = []
    labels = _assign(values, cents)
    for _ in range(max_iter):
        history.append(_sse(values, labels, cents))
        new = cents.copy()
        for j in range(len(cents)):
            members = values[labels == j]
            if members.size:
                new[j] = members.mean()
        empty = [j for j in range(len(cents)) if not np.any(labels == j)]
        for j in empty:
            # reseed at the point worst served by its current centroid
            err = np.abs(values - new[labels])
            far = np.flatnonzero(err == err.max())
            pick = far[0] if far.size == 1 else rng.choice(far)
            new[j] = values[pick]
            labels[pick] = j
        shift = np.max(np.abs(new - cents))
        cents = new
        labels = _assign(values, cents)
        if shift < tol and not empty:
            break
    history.append(_sse(values, labels, cents))
    return labels, cents, history


def optimal_1d_partition(values, k: int) -> np.ndarray:
    """Globally optimal 1-D k-means centroids by dynamic programming.

    Clusters of an optimal 1-D partition are contiguous in sorted order, so a
    DP over distinct sorted values (weighted by multiplicity) is exact.
    Cost is O(k * u^2) for u distinct values.
    """
    uniq, counts = np.unique(np.asarray(values, dtype=np.float64), return_counts=True)
    u = uniq.size
    if k >= u:
        return uniq.copy()
    w = counts.astype(np.float64)
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cx = np.concatenate([[0.0], np.cumsum(w * uniq)])
    cxx = np.concatenate([[0.0], np.cumsum(w * uniq * uniq)])
    lo = np.arange(u)[:, None]
    hi = np.arange(u)[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        n = cw[hi + 1] - cw[lo]
        s = cx[hi + 1] - cx[lo]
        cost = (cxx[hi + 1] - cxx[lo]) - s * s / n
    cost = np.where(lo <= hi, np.maximum(cost, 0.0), np.inf)

    best = cost[0].copy()
    splits = []
    for _ in range(1, k):
        prev = np.concatenate([[np.inf], best[:-1]])
        total = prev[:, None] + cost
        arg = np.argmin(total, axis=0)
        best = total[arg, np.arange(u)]
        splits.append(arg)
    bounds = []
    end = u - 1
    for arg in reversed(splits):
        start = int(arg[end])
        bounds.append((start, end))
        end = start - 1
    bounds.append((0, end))
    bounds.reverse()
    return np.array([
        (cx[b + 1] - cx[a]) / (cw[b + 1] - cw[a]) for a, b in bounds
    ])


@dataclass
class SectorReport:
    sector_id: int
    mask: np.ndarray = field(repr=False)
    mean_variance: float
    severity_level: int

    @property
    def cell_count(self) -> int:
        return int(self.mask.sum())

    @property
    def bbox(self) -> list[int]:
        """[row_min, col_min, row_max, col_max], inclusive."""
        rows, cols = np.nonzero(self.mask)
        if rows.size == 0:
            return [0, 0, -1, -1]
        return [int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())]

    def to_dict(self) -> dict:
        return {
            "sector_id": self.sector_id,
            "cell_count": self.cell_count,
            "mean_variance": self.mean_variance,
            "severity_level": self.severity_level,
            "bbox": self.bbox,
        }


def severity_level(mean_variance: float, levels: int) -> int:
    """Uniform bins over [0, 1], inverted: lowest variance is most severe."""
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    mv = min(max(float(mean_variance), 0.0), 1.0)
    bin_ = min(int(math.floor(mv * levels)), levels - 1)
    return levels - 1 - bin_


def severity_levels_kmeans(means, levels: int) -> list[int]:
    """Alternative to uniform bins: cluster the sector means into ``levels`` groups.

    The lowest-mean group gets the most severe level.
    """
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    means = np.asarray(means, dtype=np.float64)
    cents = np.sort(optimal_1d_partition(means, levels))
    groups = _assign(means, cents)
    return [levels - 1 - int(g) for g in groups]


SEVERITY_MODES = ("uniform", "kmeans")


def severity_observe(sectors, levels: int) -> list[tuple[int, int]]:
    return [(s.sector_id, severity_level(s.mean_variance, levels)) for s in sectors]


# above this many distinct intensities the exact DP is skipped
EXACT_KMEANS_LIMIT = 1024


def segment(img, k: int, seed: int = 0, mask=None, levels: int = 3,
            severity: str = "uniform") -> list[SectorReport]:
    """Cluster cell intensities into ``k`` sectors, most severe first.

    A sector is the full set of in-field cells of one intensity class; it is
    not split into connected components.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if severity not in SEVERITY_MODES:
        raise ValueError(f"severity must be one of {SEVERITY_MODES}, got {severity!r}")
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("expected a non-empty 2-D image")
    infield = np.ones(arr.shape, bool) if mask is None else np.asarray(mask, bool)
    if infield.shape != arr.shape:
        raise ValueError(f"mask shape {infield.shape} != image shape {arr.shape}")
    values = arr[infield]
    if values.size == 0:
        raise ValueError("mask selects no cells")

    rng = np.random.default_rng(seed)
    uniq = np.unique(values)
    if k >= uniq.size:
        cents = uniq
        labels = np.searchsorted(uniq, values)
    else:
        init = np.linspace(values.min(), values.max(), k)
        labels, cents, _ = lloyd_1d(values, init, rng=rng)
        if uniq.size <= EXACT_KMEANS_LIMIT:
            exact = optimal_1d_partition(values, k)
            ex_labels = _assign(values, exact)
            if _sse(values, ex_labels, exact) < _sse(values, labels, cents) - 1e-12:
                labels, cents = ex_labels, exact

    means = np.array([values[labels == j].mean() for j in range(len(cents))])
    order = np.argsort(means, kind="stable")
    clipped = [float(min(max(means[j], 0.0), 1.0)) for j in order]
    if severity == "kmeans":
        sev = severity_levels_kmeans(clipped, levels)
    else:
        sev = [severity_level(mv, levels) for mv in clipped]
    sectors = []
    for rank, j in enumerate(order):
        m = np.zeros(arr.shape, bool)
        m[infield] = labels == j
        sectors.append(SectorReport(rank, m, clipped[rank], sev[rank]))
    return sectors


def label_image(sectors, shape) -> np.ndarray:
    """Sector id per cell, -1 outside the field."""
    labels = np.full(shape, -1, dtype=np.int64)
    for s in sectors:
        labels[s.mask] = s.sector_id
    return labels


@dataclass
class PipelineResult:
    approximated: list
    diffs: list
    variance: np.ndarray
    blurred: np.ndarray
    sectors: list
    labels: np.ndarray


def run_pipeline(images, p: int = 12, sigma: float = 2.5, k: int = 10, levels: int = 3,
                 seed: int = 0, mask=None, clip: str = "neg",
                 severity: str = "uniform") -> PipelineResult:
    """Full chain from an ordered capture series to severity-ranked sectors."""
    images = [as_gray(im, f"image {i}") for i, im in enumerate(images)]
    if len(images) < 2:
        raise ValueError("need at least two images")
    shape = images[0].shape
    for i, im in enumerate(images[1:], start=1):
        if im.shape != shape:
            raise ValueError(f"image {i} has shape {im.shape}, expected {shape}")
    approx = [approximate(im, p) for im in images]
    diffs = [diff(a, b, p, clip=clip) for a, b in zip(images, images[1:])]
    var = variance_map(diffs, approx[0].shape)
    blurred = gaussian_blur(var, sigma)
    cell_mask = None if mask is None else approximate_mask(mask, p)
    sectors = segment(blurred, k, seed=seed, mask=cell_mask, levels=levels, severity=severity)
    return PipelineResult(approx, diffs, var, blurred, sectors, label_image(sectors, var.shape))


def synthetic_series(n_images: int = 5, size: int = 200, patch=(60, 70, 130, 150),
                     seed: int = 0):
    """Season of captures where one rectangle stalls while the rest grows.

    Background cells gain index by a different amount every interval, so
    their clipped differences vary; the patch only carries sensor noise.
    Returns ``(images, planted_mask)`` at pixel resolution; ``patch`` is
    ``(row0, col0, row1, col1)`` with exclusive upper bounds.
    """
    rng = np.random.default_rng(seed)
    r0, c0, r1, c1 = patch
    planted = np.zeros((size, size), bool)
    planted[r0:r1, c0:c1] = True
    base = 0.25 + 0.05 * rng.random((size, size))
    growth = rng.uniform(0.0, 0.15, size=n_images - 1)
    level = base.copy()
    images = []
    for t in range(n_images):
        if t:
            step = growth[t - 1] + 0.01 * rng.standard_normal((size, size))
            level = level + np.where(planted, 0.0, step)
        noisy = level + 0.005 * rng.standard_normal((size, size))
        images.append(np.clip(noisy, 0.0, 1.0))
    return images, planted
