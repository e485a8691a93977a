"""Support geometry: neighborhood measures, grid rasterization, ball queries.

The neighborhood measure of a particle cloud is the Lebesgue measure
restricted to the union of open eps-balls around the particles, rasterized
by the midpoint rule: a cell counts iff its center lies strictly within eps
of some particle.  Occupied cells are stored sparsely (flat indices), so
window size costs memory only in proportion to the occupied volume.
"""

import csv
import itertools
import json
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .errors import DomainError
from .simulate import ParticleState

__all__ = [
    "Window",
    "GridMeasure",
    "SpatialIndex",
    "build_index",
    "hits_ball",
    "neighborhood_measure",
    "integrate",
    "ball_mass",
    "median_nn_distance",
]


@dataclass(frozen=True)
class Window:
    """Axis-aligned box [lo_1, hi_1] x ... x [lo_d, hi_d]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DomainError("window bounds must be matching 1-d arrays")
        if not np.all(lo < hi):
            raise DomainError("window must satisfy lo < hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def d(self) -> int:
        return self.lo.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @classmethod
    def cube(cls, half_width: float, d: int, center=None) -> "Window":
        c = np.zeros(d) if center is None else np.asarray(center, dtype=np.float64)
        return cls(c - half_width, c + half_width)


@njit(cache=True, nogil=True)
def _raster(points, lo, delta, eps, shape, out, count_only):
    # cells whose center lies strictly within eps of some point; two-pass:
    # count_only first to size the output exactly, then fill
    n, d = points.shape
    k0 = np.empty(d, np.int64)
    k1 = np.empty(d, np.int64)
    idx = np.empty(d, np.int64)
    eps2 = eps * eps
    m = 0
    for i in range(n):
        empty = False
        for k in range(d):
            a = (points[i, k] - eps - lo[k]) / delta - 0.5
            b = (points[i, k] + eps - lo[k]) / delta - 0.5
            lo_k = np.int64(np.ceil(a))
            hi_k = np.int64(np.floor(b))
            if lo_k < 0:
                lo_k = 0
            if hi_k > shape[k] - 1:
                hi_k = shape[k] - 1
            if lo_k > hi_k:
                empty = True
            k0[k] = lo_k
            k1[k] = hi_k
        if empty:
            continue
        for k in range(d):
            idx[k] = k0[k]
        while True:
            s = 0.0
            for k in range(d):
                dc = lo[k] + (idx[k] + 0.5) * delta - points[i, k]
                s += dc * dc
            if s < eps2:
                if not count_only:
                    flat = np.int64(0)
                    for k in range(d):
                        flat = flat * shape[k] + idx[k]
                    out[m] = flat
                m += 1
            k = d - 1
            while k >= 0:
                idx[k] += 1
                if idx[k] <= k1[k]:
                    break
                idx[k] = k0[k]
                k -= 1
            if k < 0:
                break
    return m


@dataclass(frozen=True)
class GridMeasure:
    """Rasterized restriction of Lebesgue measure to an eps-neighborhood."""

    window: Window
    delta: float
    eps: float
    shape: tuple
    occupied: np.ndarray  # sorted unique flat cell indices (int64)

    @property
    def total(self) -> float:
        return self.occupied.size * self.delta ** len(self.shape)

    @property
    def n_occupied(self) -> int:
        return self.occupied.size

    def occupied_centers(self) -> np.ndarray:
        d = len(self.shape)
        centers = np.empty((self.occupied.size, d))
        rem = self.occupied  # unravel flat indices in C order
        for k in range(d - 1, -1, -1):
            centers[:, k] = self.window.lo[k] + (rem % self.shape[k] + 0.5) * self.delta
            rem = rem // self.shape[k]
        return centers

    def export(self, csv_path, json_path) -> None:
        d = len(self.shape)
        multi = np.empty((self.occupied.size, d), np.int64)
        rem = self.occupied
        for k in range(d - 1, -1, -1):
            multi[:, k] = rem % self.shape[k]
            rem = rem // self.shape[k]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"cell_index{k}" for k in range(d)] + ["occupied"])
            for row in multi:
                w.writerow([*map(int, row), 1])
        with open(json_path, "w") as fh:
            json.dump(
                {
                    "window_lo": self.window.lo.tolist(),
                    "window_hi": self.window.hi.tolist(),
                    "delta": self.delta,
                    "eps": self.eps,
                    "shape": [int(s) for s in self.shape],
                },
                fh,
                indent=1,
            )


_PAIR_BUDGET = 20_000_000  # cap on pre-dedup (point, cell) pairs per chunk


def _raster_total(points, eps, window, delta):
    shape = np.maximum(
        np.floor((window.hi - window.lo) / delta + 1e-9).astype(np.int64), 1
    )
    pts = np.ascontiguousarray(points, dtype=np.float64)
    # dense clouds emit far more (point, cell) pairs than distinct cells, so
    # dedupe chunkwise to keep peak memory bounded by the pair budget
    d = pts.shape[1]
    per_point = max(int(np.ceil(2.0 * eps / delta)) ** d, 1)
    chunk = max(_PAIR_BUDGET // per_point, 1)
    occupied = np.empty(0, np.int64)
    for start in range(0, max(pts.shape[0], 1), chunk):
        part = pts[start : start + chunk]
        if part.shape[0] == 0:
            continue
        m = _raster(part, window.lo, delta, eps, shape, np.empty(0, np.int64), True)
        out = np.empty(m, np.int64)
        _raster(part, window.lo, delta, eps, shape, out, False)
        occupied = np.union1d(occupied, out)
    return shape, occupied


def neighborhood_measure(points, eps, window: Window, delta: float | None = None) -> GridMeasure:
    """Midpoint-rule rasterization of the eps-neighborhood of `points`.

    `delta=None` starts at eps/10 and halves until the total moves by less
    than 0.5%.  The window must contain the eps-dilation of the cloud; a
    too-small window is an error, never a silent clip.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.size and points.shape[1] != window.d:
        raise DomainError("points and window dimension mismatch")
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    if points.size:
        slack = 1e-12
        if np.any(points.min(0) - eps < window.lo - slack) or np.any(
            points.max(0) + eps > window.hi + slack
        ):
            raise DomainError("window does not contain the eps-dilation of the points")
    if delta is not None:
        if not 0 < delta <= eps / 4 * (1 + 1e-12):
            raise DomainError(f"need 0 < delta <= eps/4, got delta={delta}, eps={eps}")
        shape, occ = _raster_total(points, eps, window, delta)
        return GridMeasure(window, float(delta), float(eps), tuple(shape), occ)
    delta = eps / 10.0
    shape, occ = _raster_total(points, eps, window, delta)
    total = occ.size * delta ** window.d
    for _ in range(4):
        shape2, occ2 = _raster_total(points, eps, window, delta / 2)
        total2 = occ2.size * (delta / 2) ** window.d
        shape, occ, moved = shape2, occ2, abs(total2 - total)
        delta, total = delta / 2, total2
        if total == 0 or moved < 0.005 * total:
            break
    return GridMeasure(window, float(delta), float(eps), tuple(shape), occ)


def integrate(grid: GridMeasure, f) -> float:
    """Sum of f over occupied cell centers times the cell volume."""
    if grid.n_occupied == 0:
        return 0.0
    centers = grid.occupied_centers()
    try:
        vals = np.asarray(f(centers), dtype=np.float64)
        if vals.shape != (centers.shape[0],):
            raise TypeError
    except Exception:
        vals = np.array([float(f(c)) for c in centers])
    return float(vals.sum() * grid.delta ** len(grid.shape))


class SpatialIndex:
    """Uniform hash grid; near-neighbor queries exact for radii <= bucket width."""

    def __init__(self, points: np.ndarray, bucket_width: float):
        if bucket_width <= 0:
            raise DomainError(f"bucket_width must be positive, got {bucket_width}")
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        self.bucket_width = float(bucket_width)
        self.d = points.shape[1] if points.size else 0
        self._buckets: dict = {}
        if points.size:
            keys = np.floor(points / bucket_width).astype(np.int64)
            order = np.lexsort(keys.T[::-1])
            keys, points = keys[order], points[order]
            splits = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
            for chunk_keys, chunk in zip(
                np.split(keys, splits), np.split(points, splits)
            ):
                self._buckets[tuple(chunk_keys[0])] = chunk

    def any_within(self, center, eps: float) -> bool:
        if eps > self.bucket_width * (1 + 1e-12):
            raise DomainError(
                f"query radius {eps} exceeds bucket width {self.bucket_width}"
            )
        if not self._buckets:
            return False
        center = np.asarray(center, dtype=np.float64)
        base = np.floor(center / self.bucket_width).astype(np.int64)
        for off in itertools.product((-1, 0, 1), repeat=self.d):
            pts = self._buckets.get(tuple(base + np.array(off)))
            if pts is not None and np.any(
                np.sum((pts - center) ** 2, axis=1) < eps * eps
            ):
                return True
        return False


def build_index(points, bucket_width: float) -> SpatialIndex:
    return SpatialIndex(np.asarray(points, dtype=np.float64), bucket_width)


def hits_ball(index: SpatialIndex, center, eps: float) -> bool:
    """True iff some indexed point lies strictly within eps of center (open ball)."""
    return index.any_within(center, eps)


def ball_mass(state: ParticleState, center, r: float) -> float:
    """Total particle mass strictly inside the open ball B(center, r)."""
    if r <= 0:
        raise DomainError(f"r must be positive, got {r}")
    if state.n == 0:
        return 0.0
    center = np.asarray(center, dtype=np.float64)
    sq = np.sum((state.positions - center) ** 2, axis=1)
    return float(np.count_nonzero(sq < r * r) * state.particle_mass)


def median_nn_distance(points: np.ndarray) -> float:
    """Median nearest-neighbor distance; the regime guard for neighborhood limits."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] < 2:
        return np.inf
    dist, _ = cKDTree(points).query(points, k=2)
    return float(np.median(dist[:, 1]))
