"""SLIC over-segmentation of single-channel amplitude images and reshaping of
superpixels into fixed-length k*k vectors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import check_image, check_same_shape


@dataclass(frozen=True)
class SuperpixelMap:
    """Label raster plus per-segment pixel lists.

    `segments[i]` holds the flat (row-major) indices of segment i in ascending
    order. `image_id` records which image of the pair the map is attached to.
    """

    labels: np.ndarray
    segments: tuple
    seed_count: int
    image_id: int = 1

    @property
    def shape(self):
        return self.labels.shape

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def coords(self, i: int) -> np.ndarray:
        """(p, 2) array of (row, col) coordinates of segment i."""
        rows, cols = np.unravel_index(self.segments[i], self.labels.shape)
        return np.column_stack([rows, cols])


@dataclass(frozen=True)
class PatchVector:
    source_image: int
    segment_id: int
    sub_index: int  # 1-based, h in [1, q+1]
    values: np.ndarray
    origin: np.ndarray = field(repr=False)  # flat pixel indices, repeats for padding


def map_from_labels(labels, seed_count: int | None = None, image_id: int = 1) -> SuperpixelMap:
    """Build a SuperpixelMap from an arbitrary integer raster (relabelled 0..n-1)."""
    labels = np.asarray(labels)
    uniq, inv = np.unique(labels.ravel(), return_inverse=True)
    inv = inv.reshape(labels.shape).astype(np.int64)
    order = np.argsort(inv.ravel(), kind="stable")
    bounds = np.cumsum(np.bincount(inv.ravel(), minlength=len(uniq)))[:-1]
    segments = tuple(np.split(order, bounds))
    return SuperpixelMap(inv, segments, seed_count or len(uniq), image_id)


def _gradient(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return gx * gx + gy * gy


def _init_seeds(img: np.ndarray, nu: int, step: float):
    M, N = img.shape
    ny = max(1, int(M / step))
    nx = max(1, int(N / step))
    while ny * nx > nu:  # float round-off guard
        if ny >= nx:
            ny -= 1
        else:
            nx -= 1
    rows = np.floor((np.arange(ny) + 0.5) * M / ny).astype(int)
    cols = np.floor((np.arange(nx) + 0.5) * N / nx).astype(int)
    grad = _gradient(img)
    seeds = []
    for r in rows:
        for c in cols:
            r0, r1 = max(r - 1, 0), min(r + 2, M)
            c0, c1 = max(c - 1, 0), min(c + 2, N)
            win = grad[r0:r1, c0:c1]
            # first minimum in row-major order
            dr, dc = np.unravel_index(np.argmin(win), win.shape)
            rr, cc = r0 + dr, c0 + dc
            seeds.append((float(rr), float(cc), img[rr, cc]))
    return np.array(seeds, dtype=np.float64)


def slic_segment(image, nu: int, compactness: float = 10.0, iterations: int = 10,
                 rng_seed: int = 0) -> SuperpixelMap:
    """SLIC with D = sqrt((d_c / compactness)^2 + (d_s / step)^2).

    d_c is the absolute amplitude difference and d_s the Euclidean pixel
    distance; the search window is 2*step x 2*step around each seed. Seeding
    is a regular grid, so the result does not depend on `rng_seed`; the
    argument is kept so every stochastic stage shares one signature.
    """
    img = check_image(image)
    M, N = img.shape
    if not 1 <= nu <= M * N:
        raise ValueError(f"nu={nu} must lie in [1, {M * N}]")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    step = math.sqrt(M * N / nu)
    seeds = _init_seeds(img, nu, step)
    K = len(seeds)
    rr = np.arange(M, dtype=np.float64)
    cc = np.arange(N, dtype=np.float64)
    inv_c2 = 1.0 / (compactness * compactness)
    inv_s2 = 1.0 / (step * step)
    flat = img.ravel()
    row_of = np.repeat(rr, N)
    col_of = np.tile(cc, M)

    labels = None
    for _ in range(iterations):
        dist = np.full((M, N), np.inf)
        lab = np.full((M, N), -1, dtype=np.int64)
        for s in range(K):
            cy, cx, v = seeds[s]
            r0 = max(0, int(math.floor(cy - step)))
            r1 = min(M, int(math.ceil(cy + step)) + 1)
            c0 = max(0, int(math.floor(cx - step)))
            c1 = min(N, int(math.ceil(cx + step)) + 1)
            sub = img[r0:r1, c0:c1]
            d2 = (sub - v) ** 2 * inv_c2 + (
                (rr[r0:r1, None] - cy) ** 2 + (cc[None, c0:c1] - cx) ** 2) * inv_s2
            dview = dist[r0:r1, c0:c1]
            better = d2 < dview
            dview[better] = d2[better]
            lab[r0:r1, c0:c1][better] = s
        orphans = np.flatnonzero(lab.ravel() < 0)
        if orphans.size:
            lab.ravel()[orphans] = _nearest_seed(row_of[orphans], col_of[orphans], seeds)
        if labels is not None and np.array_equal(lab, labels):
            break
        labels = lab
        seeds = _update_seeds(labels.ravel(), row_of, col_of, flat, seeds)

    return map_from_labels(labels, seed_count=nu)


def _nearest_seed(rows, cols, seeds) -> np.ndarray:
    out = np.empty(rows.size, dtype=np.int64)
    for start in range(0, rows.size, 4096):
        r = rows[start:start + 4096, None]
        c = cols[start:start + 4096, None]
        d = (r - seeds[None, :, 0]) ** 2 + (c - seeds[None, :, 1]) ** 2
        out[start:start + 4096] = np.argmin(d, axis=1)
    return out


def _update_seeds(labels, rows, cols, values, seeds) -> np.ndarray:
    K = len(seeds)
    count = np.bincount(labels, minlength=K).astype(np.float64)
    new = seeds.copy()
    nz = count > 0
    for j, w in enumerate((rows, cols, values)):
        total = np.bincount(labels, weights=w, minlength=K)
        new[nz, j] = total[nz] / count[nz]
    return new


def copy_pattern(source: SuperpixelMap, target_image) -> SuperpixelMap:
    """Attach the segmentation of image 1 unchanged to image 2."""
    target = np.asarray(target_image)
    check_same_shape(source.labels, target)
    return SuperpixelMap(source.labels, source.segments, source.seed_count, image_id=2)


def _segment_index_vectors(segment: np.ndarray, k: int, rng) -> list[np.ndarray]:
    """Split an ordered pixel list into k*k index vectors, padding the last."""
    kk = k * k
    p = segment.size
    if p == 0:
        raise ValueError("empty segment")
    q, rem = divmod(p, kk)
    out = [segment[j * kk:(j + 1) * kk] for j in range(q)]
    if rem:
        tail = segment[q * kk:]
        fill = tail[rng.integers(0, rem, size=kk - rem)]
        out.append(np.concatenate([tail, fill]))
    return out


def reshape_superpixel(image, segment, k: int, rng_seed, segment_id: int = 0,
                       source_image: int = 1) -> list[PatchVector]:
    """Reshape one superpixel (flat pixel indices) into k*k vectors.

    Pixels are taken in row-major order. A segment of p <= k*k pixels yields a
    single vector whose last k*k - p entries are drawn with replacement from the
    segment. Larger segments yield floor(p / k*k) full vectors plus, if pixels
    remain, one vector holding the leftovers padded the same way from them.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    seg = np.sort(np.asarray(segment, dtype=np.int64).ravel())
    flat = np.asarray(image, dtype=np.float64).ravel()
    rng = np.random.default_rng(rng_seed)
    return [PatchVector(source_image, segment_id, h + 1, flat[idx], idx)
            for h, idx in enumerate(_segment_index_vectors(seg, k, rng))]


@dataclass(frozen=True)
class PatchIndex:
    """Vectorised reshape of every segment of a map.

    `origin[g]` holds the k*k flat pixel indices of vector g, `segment_id[g]`
    and `sub_index[g]` (1-based) its back-references. The same index applies
    to both images of a pair, which keeps their vectors pixel-aligned.
    """

    origin: np.ndarray
    segment_id: np.ndarray
    sub_index: np.ndarray
    k: int

    def __len__(self):
        return len(self.segment_id)

    def values(self, image) -> np.ndarray:
        return np.asarray(image, dtype=np.float64).ravel()[self.origin]

    def vectors(self, image, source_image: int = 1) -> list[PatchVector]:
        vals = self.values(image)
        return [PatchVector(source_image, int(s), int(h), vals[g], self.origin[g])
                for g, (s, h) in enumerate(zip(self.segment_id, self.sub_index))]


def reshape_all(smap: SuperpixelMap, k: int, rng_seed: int,
                segment_ids=None) -> PatchIndex:
    """Reshape every (or the selected) segment; segment i is seeded with (rng_seed, i)."""
    ids = range(smap.n_segments) if segment_ids is None else segment_ids
    origin, seg, sub = [], [], []
    for i in ids:
        rng = np.random.default_rng([rng_seed, int(i)])
        vecs = _segment_index_vectors(smap.segments[i], k, rng)
        origin.extend(vecs)
        seg.extend([i] * len(vecs))
        sub.extend(range(1, len(vecs) + 1))
    kk = k * k
    origin = np.array(origin, dtype=np.int64).reshape(-1, kk)
    return PatchIndex(origin, np.array(seg, dtype=np.int64),
                      np.array(sub, dtype=np.int64), k)
