"""Point-cloud geometric primitives.

Random nested downsampling hierarchies, K-nearest-neighbor tables, the
nearest-neighbor up/down index maps used by the codec grids, and exact
label propagation across resolutions. All operations are pure functions
of (inputs, seed); KNN has a brute-force reference path and a uniform-grid
accelerated path that agree exactly, including the distance/index
tie-break.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IndexRangeError, InputError, ShapeError
from .tensor import Tensor, gather_rows


def thread_cap() -> int:
    """Worker cap from CODECFORGE_THREADS; 0 means single-threaded."""
    try:
        return max(0, int(os.environ.get("CODECFORGE_THREADS", "0")))
    except ValueError:
        return 0


@dataclass
class PointCloud:
    """Points with optional colors in [0, 1] and integer class labels."""

    coords: np.ndarray  # n x 3 float64, meters
    colors: np.ndarray | None = None  # n x 3 in [0, 1]
    labels: np.ndarray | None = None  # n int class ids

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise InputError(f"coords must be n x 3, got {self.coords.shape}")
        if len(self.coords) < 1:
            raise InputError("point cloud must contain at least one point")
        if not np.isfinite(self.coords).all():
            raise InputError("coords contain non-finite values")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64)
            if self.colors.shape != self.coords.shape:
                raise InputError(
                    f"colors shape {self.colors.shape} != coords shape {self.coords.shape}"
                )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.coords),):
                raise InputError("labels must be one per point")

    def __len__(self) -> int:
        return len(self.coords)

    def features(self, use_colors: bool = True) -> np.ndarray:
        """Per-point input features: xyz or xyz+rgb."""
        if use_colors:
            if self.colors is None:
                raise InputError("cloud has no colors")
            return np.concatenate([self.coords, self.colors], axis=1)
        return self.coords

    def subset(self, idx: np.ndarray) -> "PointCloud":
        return PointCloud(
            self.coords[idx],
            None if self.colors is None else self.colors[idx],
            None if self.labels is None else self.labels[idx],
        )


@dataclass
class KnnTable:
    k: int
    indices: np.ndarray  # m x k int64


@dataclass
class HierarchyRow:
    subset_idx: np.ndarray  # indices into the previous row
    global_idx: np.ndarray  # indices into the full-resolution cloud
    coords: np.ndarray  # row coordinates
    knn: KnnTable  # neighborhoods within this row
    up_nn: np.ndarray  # for each previous-row point, nearest point here


@dataclass
class SamplingHierarchy:
    """Nested random subsets with KNN tables and up/down index maps.

    Row -1 is the full-resolution cloud; rows[i] holds the coded row i.
    """

    ratios: tuple[int, ...]
    full_coords: np.ndarray
    rows: list[HierarchyRow] = field(default_factory=list)

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    def row_size(self, i: int) -> int:
        if i == -1:
            return len(self.full_coords)
        return len(self.rows[i].coords)


# ---------------------------------------------------------------------------
# sampling and KNN


def random_subsample(n: int, ratio: int, seed: int) -> np.ndarray:
    """ceil(n/ratio) distinct indices, uniform without replacement, sorted."""
    if n < 1:
        raise InputError(f"cannot subsample from {n} points")
    if ratio < 1:
        raise ConfigError(f"subsample ratio must be >= 1, got {ratio}")
    m = -(-n // ratio)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=m, replace=False)).astype(np.int64)


def _pad_with_replacement(order: np.ndarray, k: int) -> np.ndarray:
    # cycle through the nearest-first ordering until k entries
    return np.resize(order, k)


def knn_brute_force(query: np.ndarray, reference: np.ndarray, k: int) -> KnnTable:
    """O(mn) exact KNN: ascending distance, ties to the lowest index."""
    query = np.asarray(query, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if len(reference) == 0:
        raise InputError("knn: empty reference set")
    if k < 1:
        raise ConfigError(f"knn: k must be >= 1, got {k}")
    n = len(reference)
    out = np.empty((len(query), k), dtype=np.int64)
    for qi, q in enumerate(query):
        d2 = ((reference - q) ** 2).sum(axis=1)
        order = np.argsort(d2, kind="stable")
        out[qi] = _pad_with_replacement(order[: min(k, n)], k)
    return KnnTable(k=k, indices=out)


class _UniformGrid:
    """Hash grid over the reference points for accelerated KNN queries."""

    def __init__(self, reference: np.ndarray):
        self.ref = reference
        mins = reference.min(axis=0)
        maxs = reference.max(axis=0)
        extent = float((maxs - mins).max())
        # aim for ~8 points per occupied cell; cell size is a speed knob only
        target = max(1, round((len(reference) / 8.0) ** (1.0 / 3.0)))
        self.h = extent / target if extent > 0 else 1.0
        self.mins = mins
        cells = np.floor((reference - mins) / self.h).astype(np.int64)
        self.cell_max = cells.max(axis=0)
        grouped: dict[tuple[int, int, int], list[int]] = {}
        for i, c in enumerate(map(tuple, cells)):
            grouped.setdefault(c, []).append(i)
        self.cell_arrays = {c: np.asarray(v, dtype=np.int64) for c, v in grouped.items()}

    def rings_to_cover(self, center: np.ndarray) -> int:
        """Chebyshev ring radius after which every cell has been scanned."""
        return int(np.maximum(np.abs(center), np.abs(self.cell_max - center)).max())

    def ring_members(self, center: np.ndarray, r: int) -> np.ndarray:
        """Reference indices in cells at Chebyshev cell-distance exactly r."""
        found = []
        cx, cy, cz = center
        if r == 0:
            arr = self.cell_arrays.get((cx, cy, cz))
            return arr if arr is not None else np.empty(0, dtype=np.int64)
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dz in range(-r, r + 1):
                    if max(abs(dx), abs(dy), abs(dz)) != r:
                        continue
                    arr = self.cell_arrays.get((cx + dx, cy + dy, cz + dz))
                    if arr is not None:
                        found.append(arr)
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(found)


def knn_grid(query: np.ndarray, reference: np.ndarray, k: int) -> KnnTable:
    """Grid-accelerated exact KNN; agrees with knn_brute_force bitwise.

    Expands Chebyshev cell rings until the k-th best squared distance is
    strictly below the lower bound of any unscanned ring, then resolves the
    candidate set with the same stable sort as the brute-force path.
    """
    query = np.asarray(query, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if len(reference) == 0:
        raise InputError("knn: empty reference set")
    if k < 1:
        raise ConfigError(f"knn: k must be >= 1, got {k}")
    grid = _UniformGrid(reference)
    n = len(reference)
    kk = min(k, n)
    out = np.empty((len(query), k), dtype=np.int64)
    # any point in ring r+1 is at least r*h from anywhere in the center cell,
    # so stopping requires the k-th best to beat that bound strictly
    for qi, q in enumerate(query):
        center = np.floor((q - grid.mins) / grid.h).astype(np.int64)
        exhausted = grid.rings_to_cover(center)
        cand: list[np.ndarray] = []
        count = 0
        r = 0
        while True:
            members = grid.ring_members(center, r)
            if len(members):
                cand.append(members)
                count += len(members)
            if count >= kk:
                all_cand = np.sort(np.concatenate(cand))
                d2 = ((reference[all_cand] - q) ** 2).sum(axis=1)
                kth = np.partition(d2, kk - 1)[kk - 1]
                if kth < (r * grid.h) ** 2 or r >= exhausted:
                    order = all_cand[np.argsort(d2, kind="stable")]
                    out[qi] = _pad_with_replacement(order[:kk], k)
                    break
            r += 1
    return KnnTable(k=k, indices=out)


def knn(query, reference, k: int, method: str = "auto") -> KnnTable:
    """Exact KNN table; method is brute, grid, or auto (size heuristic)."""
    query = np.asarray(query, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if method == "auto":
        method = "grid" if len(query) * len(reference) > 250_000 else "brute"
    if method == "brute":
        return knn_brute_force(query, reference, k)
    if method == "grid":
        return knn_grid(query, reference, k)
    raise ConfigError(f"unknown knn method {method!r}")


def nearest_in(query: np.ndarray, reference: np.ndarray, method: str = "auto") -> np.ndarray:
    """Index of each query point's nearest reference point (ties: lowest index)."""
    return knn(query, reference, 1, method=method).indices[:, 0]


# ---------------------------------------------------------------------------
# hierarchy construction and resolution changes


def build_hierarchy(
    cloud: PointCloud,
    ratios,
    k: int,
    seed: int,
    knn_method: str = "auto",
) -> SamplingHierarchy:
    """Nested per-row subsets with KNN tables and nearest up-maps."""
    ratios = tuple(int(r) for r in ratios)
    if any(r < 1 for r in ratios):
        raise ConfigError(f"ratios must all be >= 1, got {ratios}")
    n = len(cloud)
    if n < int(np.prod(ratios)):
        raise InputError(
            f"{n} points cannot support ratios {ratios} "
            f"(need >= {int(np.prod(ratios))} so the deepest row is non-empty)"
        )
    seeds = np.random.SeedSequence(seed).generate_state(len(ratios), dtype=np.uint64)
    hier = SamplingHierarchy(ratios=ratios, full_coords=cloud.coords)
    prev_coords = cloud.coords
    prev_global = np.arange(n, dtype=np.int64)
    for i, ratio in enumerate(ratios):
        subset = random_subsample(len(prev_coords), ratio, int(seeds[i]))
        coords = prev_coords[subset]
        hier.rows.append(
            HierarchyRow(
                subset_idx=subset,
                global_idx=prev_global[subset],
                coords=coords,
                knn=knn(coords, coords, k, method=knn_method),
                up_nn=nearest_in(prev_coords, coords, method=knn_method),
            )
        )
        prev_coords = coords
        prev_global = prev_global[subset]
    return hier


def upsample_nearest(features: Tensor, hier: SamplingHierarchy, from_row: int) -> Tensor:
    """Copy row features to the next finer row via nearest-neighbor indices.

    Differentiable: gradients scatter-add back onto the coarse points.
    """
    row = hier.rows[from_row]
    if features.shape[0] != len(row.coords):
        raise ShapeError(
            f"upsample: features have {features.shape[0]} rows, row {from_row} "
            f"has {len(row.coords)} points"
        )
    return gather_rows(features, row.up_nn)


def downsample_gather(features: Tensor, hier: SamplingHierarchy, to_row: int) -> Tensor:
    """Keep the features of the points that survive sampling into to_row."""
    row = hier.rows[to_row]
    expected = hier.row_size(to_row - 1)
    if features.shape[0] != expected:
        raise ShapeError(
            f"downsample: features have {features.shape[0]} rows, row {to_row - 1} "
            f"has {expected} points"
        )
    return gather_rows(features, row.subset_idx)


def propagate_labels(labels: np.ndarray, hier: SamplingHierarchy, row: int) -> np.ndarray:
    """Labels of the surviving subset points at the given row (exact)."""
    if labels is None:
        raise InputError("propagate_labels: cloud has no labels")
    labels = np.asarray(labels)
    if len(labels) != len(hier.full_coords):
        raise IndexRangeError(
            f"propagate_labels: {len(labels)} labels for "
            f"{len(hier.full_coords)} full-resolution points"
        )
    if row == -1:
        return labels
    return labels[hier.rows[row].global_idx]
