"""Superpixel segmentation and the two-scale averaging transforms.

The coarse image scale is defined by a superpixel labeling of the pixel
grid.  ``coarsen`` averages matrix columns inside each superpixel (the
dimensionality-reducing transform) and ``expand`` replicates each coarse
column back to every member pixel (its conjugate).  The number of
superpixels is chosen automatically from a spectral-homogeneity score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_model import SpectralImage, save_matrix_image
from .errors import DataFormatError

SLIC_ITERATIONS = 10
HOM_FLOOR = 1e-6
HOM_CAP = 1e6
N_SCALE_CANDIDATES = 12


@dataclass(frozen=True)
class SuperpixelMap:
    """Pixel -> superpixel labeling over a width x height grid.

    labels holds one integer in [0, K) per pixel (row-major).  ``order`` and
    ``offsets`` are cached so that grouped reductions can slice a
    label-sorted pixel ordering.
    """

    labels: np.ndarray
    K: int
    width: int
    height: int
    sizes: np.ndarray = field(default=None, compare=False)  # type: ignore[assignment]
    order: np.ndarray = field(default=None, compare=False)  # type: ignore[assignment]
    offsets: np.ndarray = field(default=None, compare=False)  # type: ignore[assignment]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        object.__setattr__(self, "labels", labels)
        n = self.width * self.height
        if labels.shape[0] != n:
            raise DataFormatError("label vector does not match the pixel grid")
        if labels.min(initial=0) < 0 or (self.K > 0 and labels.max(initial=-1) >= self.K):
            raise DataFormatError("labels out of range [0, K)")
        sizes = np.bincount(labels, minlength=self.K)
        if np.any(sizes == 0):
            raise DataFormatError("every superpixel must be nonempty")
        order = np.argsort(labels, kind="stable")
        offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "offsets", offsets)

    @property
    def n_pixels(self) -> int:
        return self.labels.shape[0]

    @property
    def mean_size(self) -> float:
        return self.n_pixels / self.K

    def is_connected(self) -> bool:
        """True when every superpixel is 4-connected on the grid."""
        lab = self.labels.reshape(self.height, self.width)
        comp = _grid_components(lab)
        return int(comp.max()) + 1 == self.K


def _grid_components(lab: np.ndarray) -> np.ndarray:
    """Connected components (4-connectivity) of equal-valued grid cells.

    Returns an int array of the same shape with component ids numbered by
    first appearance in scan order.
    """
    h, w = lab.shape
    n = h * w
    parent = np.arange(n)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            if rj < ri:
                ri, rj = rj, ri
            parent[rj] = ri

    flat = lab.ravel()
    idx = np.arange(n).reshape(h, w)
    right = np.flatnonzero((lab[:, :-1] == lab[:, 1:]))
    for k in idx[:, :-1].ravel()[right]:
        union(k, k + 1)
    down = np.flatnonzero((lab[:-1, :] == lab[1:, :]))
    for k in idx[:-1, :].ravel()[down]:
        union(k, k + w)

    roots = np.array([find(i) for i in range(n)])
    _, comp = np.unique(roots, return_inverse=True)
    # renumber by first appearance so the result is scan-order deterministic
    first = np.full(comp.max() + 1, -1, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    next_id = 0
    for i in range(n):
        c = comp[i]
        if first[c] < 0:
            first[c] = next_id
            next_id += 1
        out[i] = first[c]
    return out.reshape(h, w)


def _enforce_connectivity(labels: np.ndarray, width: int, height: int,
                          min_size: int = 1) -> np.ndarray:
    """Merge stray connected components into an adjacent component.

    Each label keeps its largest component; every other component, and any
    component smaller than ``min_size``, is attached to the neighboring
    component with which it shares the longest border (ties broken toward
    the smaller component id), so the final labeling partitions the grid
    into connected regions without fragments.
    """
    lab = labels.reshape(height, width)
    comp = _grid_components(lab)
    ncomp = int(comp.max()) + 1
    comp_flat = comp.ravel()
    comp_label = np.zeros(ncomp, dtype=np.int64)
    comp_label[comp_flat] = labels
    comp_size = np.bincount(comp_flat, minlength=ncomp)

    keep = np.zeros(ncomp, dtype=bool)
    for lbl in np.unique(labels):
        members = np.flatnonzero(comp_label == lbl)
        best = members[np.argmax(comp_size[members])]
        if comp_size[best] >= min_size:
            keep[best] = True
    if not keep.any():
        keep[np.argmax(comp_size)] = True

    # adjacency contact lengths between distinct components
    pairs = []
    a, b = comp[:, :-1].ravel(), comp[:, 1:].ravel()
    m = a != b
    pairs.append(np.stack([a[m], b[m]], axis=1))
    a, b = comp[:-1, :].ravel(), comp[1:, :].ravel()
    m = a != b
    pairs.append(np.stack([a[m], b[m]], axis=1))
    pairs = np.concatenate(pairs, axis=0)
    pairs.sort(axis=1)

    parent = np.arange(ncomp)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if pairs.size:
        key = pairs[:, 0] * ncomp + pairs[:, 1]
        uniq, counts = np.unique(key, return_counts=True)
        contact = {}
        for k, c in zip(uniq.tolist(), counts.tolist()):
            i, j = divmod(k, ncomp)
            contact.setdefault(i, []).append((j, c))
            contact.setdefault(j, []).append((i, c))
        for c in np.flatnonzero(~keep):
            neighbors = contact.get(int(c), [])
            if not neighbors:
                continue
            # longest contact first, then smallest id
            target = min(neighbors, key=lambda t: (-t[1], t[0]))[0]
            parent[find(int(c))] = find(target)

    roots = np.array([find(i) for i in range(ncomp)])
    merged = roots[comp_flat]
    # relabel consecutively by first appearance
    first = {}
    out = np.empty_like(merged)
    next_id = 0
    for i, r in enumerate(merged.tolist()):
        j = first.get(r)
        if j is None:
            first[r] = j = next_id
            next_id += 1
        out[i] = j
    return out


def slic_segment(img: SpectralImage, n_segments: int, compactness: float | None = None,
                 n_iter: int = SLIC_ITERATIONS) -> SuperpixelMap:
    """SLIC superpixel segmentation on the full spectral vectors.

    Seeds start on a regular grid of step ~sqrt(N/K); each iteration assigns
    pixels within a 2-step window of every center by the combined distance

        d^2 = |y - c_spec|^2 + (compactness / step)^2 * d_spatial^2

    and recomputes the centers.  A final pass enforces 4-connectivity, so
    the stored superpixel count can differ slightly from ``n_segments``.
    compactness defaults to 0.05 times the mean pixel norm.
    """
    N = img.n_pixels
    if not 1 <= n_segments <= N:
        raise DataFormatError(f"n_segments must be in [1, {N}], got {n_segments}")
    H, W = img.height, img.width
    Y = img.data
    if compactness is None:
        compactness = 0.05 * float(np.mean(np.linalg.norm(Y, axis=0)))

    step = np.sqrt(N / n_segments)
    ny = int(np.clip(round(H / step), 1, H))
    nx = int(np.clip(round(n_segments / ny), 1, W))
    sy = np.minimum(np.round((np.arange(ny) + 0.5) * H / ny - 0.5).astype(int), H - 1)
    sx = np.minimum(np.round((np.arange(nx) + 0.5) * W / nx - 0.5).astype(int), W - 1)
    grid_r, grid_c = np.meshgrid(sy, sx, indexing="ij")
    seed_idx = (grid_r * W + grid_c).ravel()
    K = seed_idx.shape[0]

    centers = Y[:, seed_idx].copy()
    cr = grid_r.ravel().astype(np.float64)
    cc = grid_c.ravel().astype(np.float64)

    sqnorm = np.einsum("ij,ij->j", Y, Y)
    rows = np.arange(H, dtype=np.float64)
    cols = np.arange(W, dtype=np.float64)
    w_spatial = (compactness / step) ** 2
    reach = int(np.ceil(2 * step))

    labels = np.zeros(N, dtype=np.int64)
    for _ in range(max(1, n_iter)):
        dist = np.full(N, np.inf)
        labels.fill(-1)
        cnorm = np.einsum("ij,ij->j", centers, centers)
        for i in range(K):
            r0 = max(0, int(np.floor(cr[i])) - reach)
            r1 = min(H, int(np.ceil(cr[i])) + reach + 1)
            c0 = max(0, int(np.floor(cc[i])) - reach)
            c1 = min(W, int(np.ceil(cc[i])) + reach + 1)
            flat = (np.arange(r0, r1)[:, None] * W + np.arange(c0, c1)[None, :]).ravel()
            d2 = sqnorm[flat] - 2.0 * (centers[:, i] @ Y[:, flat]) + cnorm[i]
            dr = rows[r0:r1, None] - cr[i]
            dc = cols[None, c0:c1] - cc[i]
            d2 = d2 + w_spatial * (dr * dr + dc * dc).ravel()
            better = d2 < dist[flat]
            upd = flat[better]
            dist[upd] = d2[better]
            labels[upd] = i

        missing = np.flatnonzero(labels < 0)
        if missing.size:
            # windows did not cover these pixels; assign by full search
            mr = (missing // W).astype(np.float64)
            mc = (missing % W).astype(np.float64)
            d2 = (
                sqnorm[missing][:, None]
                - 2.0 * (Y[:, missing].T @ centers)
                + cnorm[None, :]
                + w_spatial * ((mr[:, None] - cr) ** 2 + (mc[:, None] - cc) ** 2)
            )
            labels[missing] = np.argmin(d2, axis=1)

        counts = np.bincount(labels, minlength=K).astype(np.float64)
        nonempty = counts > 0
        sums = np.empty((Y.shape[0], K))
        for b in range(Y.shape[0]):
            sums[b] = np.bincount(labels, weights=Y[b], minlength=K)
        pr = np.bincount(labels, weights=np.repeat(rows, W), minlength=K)
        pc = np.bincount(labels, weights=np.tile(cols, H), minlength=K)
        centers[:, nonempty] = sums[:, nonempty] / counts[nonempty]
        cr[nonempty] = pr[nonempty] / counts[nonempty]
        cc[nonempty] = pc[nonempty] / counts[nonempty]

    min_size = max(1, int(N / n_segments) // 4)
    labels = _enforce_connectivity(labels, W, H, min_size=min_size)
    return SuperpixelMap(labels, int(labels.max()) + 1, W, H)


def coarsen(X: np.ndarray, smap: SuperpixelMap) -> np.ndarray:
    """Average the columns of X inside each superpixel -> (D, K) matrix.

    The mean is anchored at the per-group minimum (m + mean(x - m)) so that
    a replicated block averages back to itself bit-exactly and nonnegative
    input stays nonnegative.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != smap.n_pixels:
        raise DataFormatError("column count does not match the pixel grid")
    Xs = X[:, smap.order]
    mins = np.minimum.reduceat(Xs, smap.offsets, axis=1)
    diff = Xs - np.repeat(mins, smap.sizes, axis=1)
    return mins + np.add.reduceat(diff, smap.offsets, axis=1) / smap.sizes


def expand(Xc: np.ndarray, smap: SuperpixelMap) -> np.ndarray:
    """Replicate each coarse column to all pixels of its superpixel."""
    Xc = np.atleast_2d(np.asarray(Xc, dtype=np.float64))
    if Xc.shape[1] != smap.K:
        raise DataFormatError("column count does not match the superpixel count")
    return Xc[:, smap.labels]


def homogeneity(img: SpectralImage, smap: SuperpixelMap,
                floor: float = HOM_FLOOR, cap: float = HOM_CAP) -> float:
    """Mean ratio of the two largest singular values across superpixels.

    Large values mean the matricized superpixels are close to rank one,
    i.e. spectrally homogeneous.  sigma_2 is floored at floor * sigma_1 and
    the per-superpixel ratio capped at ``cap``; single-pixel and rank-1
    blocks therefore contribute the cap value.
    """
    Ys = img.data[:, smap.order]
    total = 0.0
    for i in range(smap.K):
        start = smap.offsets[i]
        block = Ys[:, start:start + smap.sizes[i]]
        s = np.linalg.svd(block, compute_uv=False)
        s1 = float(s[0])
        s2 = float(s[1]) if s.shape[0] > 1 else 0.0
        if s1 <= 0.0:
            ratio = cap
        else:
            ratio = min(s1 / max(s2, floor * s1), cap)
        total += ratio
    return total / smap.K


@dataclass(frozen=True)
class HomogeneityProfile:
    """Homogeneity score evaluated on a grid of superpixel counts."""

    candidates: tuple  # of (K, hom) pairs, K ascending

    def __post_init__(self):
        for k, h in self.candidates:
            if not (np.isfinite(h) and h > 0):
                raise DataFormatError(f"invalid homogeneity value {h} at K={k}")


def candidate_counts(kmin: int, kmax: int, n: int = N_SCALE_CANDIDATES) -> np.ndarray:
    """Logarithmically spaced integer candidate counts between the bounds
    (order-insensitive), deduplicated and ascending."""
    lo, hi = sorted((int(kmin), int(kmax)))
    if lo < 1:
        raise DataFormatError("superpixel count bounds must be >= 1")
    grid = np.unique(np.round(np.geomspace(lo, hi, num=n)).astype(int))
    return np.clip(grid, lo, hi)


def segment_with_homogeneity(img: SpectralImage, kmin: int, kmax: int, eps: float,
                             compactness: float | None = None,
                             prefer_larger_size: bool = True):
    """Segment at every candidate count and pick the scale.

    Among candidates whose homogeneity is within (1 - eps) of the best, the
    default preference keeps the largest average superpixel size (smallest
    count); ``prefer_larger_size=False`` keeps the largest count instead.
    Returns (selected SuperpixelMap, HomogeneityProfile).
    """
    if not 0 <= eps < 1:
        raise DataFormatError("eps must be in [0, 1)")
    counts = candidate_counts(kmin, kmax)
    if counts.size == 0:
        raise DataFormatError("empty candidate grid")
    maps, scores, seen = [], [], set()
    for k in counts:
        smap = slic_segment(img, int(k), compactness=compactness)
        if smap.K in seen:
            continue
        seen.add(smap.K)
        maps.append(smap)
        scores.append(homogeneity(img, smap))
    order = np.argsort([m.K for m in maps])
    maps = [maps[i] for i in order]
    scores = [scores[i] for i in order]
    best = max(scores)
    admissible = [i for i, h in enumerate(scores) if h >= (1.0 - eps) * best]
    pick = admissible[0] if prefer_larger_size else admissible[-1]
    profile = HomogeneityProfile(tuple((m.K, h) for m, h in zip(maps, scores)))
    return maps[pick], profile


def select_num_superpixels(img: SpectralImage, kmin: int, kmax: int, eps: float,
                           compactness: float | None = None,
                           prefer_larger_size: bool = True) -> int:
    """Automatic choice of the superpixel count via the homogeneity score."""
    smap, _ = segment_with_homogeneity(
        img, kmin, kmax, eps, compactness=compactness,
        prefer_larger_size=prefer_larger_size,
    )
    return smap.K


def save_label_map(path, smap: SuperpixelMap) -> None:
    """Export the labeling as a single-band image in the binary container."""
    save_matrix_image(path, smap.labels[None, :].astype(np.float64),
                      smap.width, smap.height)
