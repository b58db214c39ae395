"""Synthetic labeled indoor scenes built from geometric primitives.

Scenes mimic the structure of indoor scan data: a planar floor, four
walls, box furniture, thin boards mounted on walls, vertical columns,
and uniform clutter. Boards and columns are deliberately tinted close to
the walls so that color alone cannot separate the small-object classes;
geometry has to do the work. Coordinate jitter is clipped at four sigma,
which keeps every primitive's points identifiable by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GenerationError
from .pointops import PointCloud

CLASS_NAMES = ("floor", "wall", "box_furniture", "thin_board", "column", "clutter")
FLOOR, WALL, BOX_FURNITURE, THIN_BOARD, COLUMN, CLUTTER = range(6)

_TINTS = {
    FLOOR: (0.45, 0.42, 0.40),
    WALL: (0.75, 0.73, 0.70),
    BOX_FURNITURE: (0.35, 0.25, 0.15),
    THIN_BOARD: (0.70, 0.70, 0.68),  # deliberately close to the wall tint
    COLUMN: (0.72, 0.70, 0.66),
    CLUTTER: (0.30, 0.50, 0.30),
}


@dataclass
class SceneSpec:
    extent: tuple[float, float, float] = (4.0, 4.0, 2.5)  # width, depth, height (m)
    density: float = 60.0  # points per square meter of surface
    small_object_fraction: float = 0.12  # target share of board+column points
    noise_sigma: float = 0.01  # coordinate jitter (m), clipped at 4 sigma
    color_noise: float = 0.08
    min_points_per_class: int = 16
    clutter_fraction: float = 0.06  # volumetric noise share of the budget
    board_offset: float = 0.02  # wall-to-board standoff (m)
    column_radius: tuple[float, float] = (0.08, 0.18)
    layout: str = "room"  # "room" (contacting surfaces) or "spread" (gapped cells)


def _sample_rect(rng, origin, u_vec, v_vec, n):
    a = rng.random((n, 1))
    b = rng.random((n, 1))
    return np.asarray(origin) + a * np.asarray(u_vec) + b * np.asarray(v_vec)


def _sample_cylinder(rng, center_xy, radius, height, n):
    theta = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(0, height, n)
    return np.stack(
        [
            center_xy[0] + radius * np.cos(theta),
            center_xy[1] + radius * np.sin(theta),
            z,
        ],
        axis=1,
    )


def _sample_box_surface(rng, corner, dims, n):
    """Points on the top and four side faces of an axis-aligned box."""
    w, d, h = dims
    faces = [
        # (origin offset, u, v, area)
        ((0, 0, h), (w, 0, 0), (0, d, 0), w * d),  # top
        ((0, 0, 0), (w, 0, 0), (0, 0, h), w * h),  # front
        ((0, d, 0), (w, 0, 0), (0, 0, h), w * h),  # back
        ((0, 0, 0), (0, d, 0), (0, 0, h), d * h),  # left
        ((w, 0, 0), (0, d, 0), (0, 0, h), d * h),  # right
    ]
    areas = np.array([f[3] for f in faces])
    counts = rng.multinomial(n, areas / areas.sum())
    parts = []
    for (off, u, v, _), c in zip(faces, counts):
        if c:
            parts.append(_sample_rect(rng, np.asarray(corner) + off, u, v, c))
    return np.concatenate(parts) if parts else np.zeros((0, 3))


def generate_scene(spec: SceneSpec, seed: int) -> PointCloud:
    """Deterministic labeled scene; raises when a class cannot reach its quota."""
    if spec.layout == "spread":
        return _generate_spread(spec, seed)
    if spec.layout != "room":
        raise GenerationError(f"unknown scene layout {spec.layout!r}")
    rng = np.random.default_rng(seed)
    w, d, h = spec.extent

    # surface areas drive the raw point budget per class
    floor_area = w * d
    wall_area = 2 * (w + d) * h
    n_floor = max(1, int(floor_area * spec.density))
    n_wall = max(1, int(wall_area * spec.density))

    # furniture boxes on the floor
    n_boxes = int(rng.integers(2, 4))
    boxes = []
    for _ in range(n_boxes):
        dims = rng.uniform([0.4, 0.4, 0.3], [1.2, 1.2, 1.0])
        corner = rng.uniform(
            [0.2, 0.2, 0.0], [max(0.3, w - 1.4), max(0.3, d - 1.4), 0.0]
        )
        boxes.append((corner, dims))
    box_area = sum(
        bw * bd + 2 * (bw + bd) * bh for _, (bw, bd, bh) in boxes
    )
    n_box = max(1, int(box_area * spec.density))

    n_base = n_floor + n_wall + n_box
    n_clutter = max(1, int(spec.clutter_fraction * n_base))
    # boards and columns sized to hit the requested small-object share
    n_small = int(
        spec.small_object_fraction
        / max(1e-9, 1.0 - spec.small_object_fraction)
        * (n_base + n_clutter)
    )
    n_board = max(1, n_small // 2)
    n_column = max(1, n_small - n_board)

    counts = {
        FLOOR: n_floor,
        WALL: n_wall,
        BOX_FURNITURE: n_box,
        THIN_BOARD: n_board,
        COLUMN: n_column,
        CLUTTER: n_clutter,
    }
    for cls, n in counts.items():
        if n < spec.min_points_per_class:
            raise GenerationError(
                f"class {CLASS_NAMES[cls]} would get {n} points, "
                f"needs >= {spec.min_points_per_class}; raise density or extent"
            )

    chunks: list[tuple[np.ndarray, int]] = []
    chunks.append((_sample_rect(rng, (0, 0, 0), (w, 0, 0), (0, d, 0), n_floor), FLOOR))

    wall_faces = [
        ((0, 0, 0), (w, 0, 0), (0, 0, h), w * h),
        ((0, d, 0), (w, 0, 0), (0, 0, h), w * h),
        ((0, 0, 0), (0, d, 0), (0, 0, h), d * h),
        ((w, 0, 0), (0, d, 0), (0, 0, h), d * h),
    ]
    areas = np.array([f[3] for f in wall_faces])
    per_wall = rng.multinomial(n_wall, areas / areas.sum())
    for (off, u, v, _), c in zip(wall_faces, per_wall):
        if c:
            chunks.append((_sample_rect(rng, off, u, v, c), WALL))

    per_box = rng.multinomial(n_box, np.ones(n_boxes) / n_boxes)
    for (corner, dims), c in zip(boxes, per_box):
        if c:
            chunks.append((_sample_box_surface(rng, corner, dims, c), BOX_FURNITURE))

    # thin boards: rectangles standing 2 cm off a wall plane
    n_board_pieces = int(rng.integers(2, 5))
    per_piece = rng.multinomial(n_board, np.ones(n_board_pieces) / n_board_pieces)
    for c in per_piece:
        if not c:
            continue
        bw = rng.uniform(0.5, 1.2)
        bh = rng.uniform(0.4, 0.9)
        z0 = rng.uniform(0.7, h - bh - 0.2)
        side = int(rng.integers(0, 4))
        x0 = rng.uniform(0.2, max(0.3, w - bw - 0.2))
        y0 = rng.uniform(0.2, max(0.3, d - bw - 0.2))
        off = spec.board_offset
        if side == 0:
            pts = _sample_rect(rng, (x0, off, z0), (bw, 0, 0), (0, 0, bh), c)
        elif side == 1:
            pts = _sample_rect(rng, (x0, d - off, z0), (bw, 0, 0), (0, 0, bh), c)
        elif side == 2:
            pts = _sample_rect(rng, (off, y0, z0), (0, bw, 0), (0, 0, bh), c)
        else:
            pts = _sample_rect(rng, (w - off, y0, z0), (0, bw, 0), (0, 0, bh), c)
        chunks.append((pts, THIN_BOARD))

    n_columns = int(rng.integers(1, 3))
    per_col = rng.multinomial(n_column, np.ones(n_columns) / n_columns)
    for c in per_col:
        if not c:
            continue
        center = rng.uniform([0.5, 0.5], [w - 0.5, d - 0.5])
        radius = rng.uniform(*spec.column_radius)
        chunks.append((_sample_cylinder(rng, center, radius, h, c), COLUMN))

    chunks.append(
        (rng.uniform([0, 0, 0], [w, d, h], (n_clutter, 3)), CLUTTER)
    )

    return _finish(spec, rng, chunks)


def _finish(spec: SceneSpec, rng, chunks) -> PointCloud:
    """Shared tail: tint, jitter (clipped at 4 sigma), shuffle."""
    coords = np.concatenate([c for c, _ in chunks])
    labels = np.concatenate([np.full(len(c), cls, dtype=np.int64) for c, cls in chunks])
    colors = np.array([_TINTS[cls] for cls in labels], dtype=np.float64)
    colors += rng.uniform(-spec.color_noise, spec.color_noise, colors.shape)
    colors = np.clip(colors, 0.0, 1.0)
    jitter = rng.normal(0.0, spec.noise_sigma, coords.shape)
    jitter = np.clip(jitter, -4.0 * spec.noise_sigma, 4.0 * spec.noise_sigma)
    perm = rng.permutation(len(coords))
    return PointCloud(
        coords=(coords + jitter)[perm], colors=colors[perm], labels=labels[perm]
    )


def _generate_spread(spec: SceneSpec, seed: int) -> PointCloud:
    """One primitive group per grid cell, 0.8 m gaps between cells.

    Class regions never touch, so even aggressive downsampling keeps each
    region's identity; useful for capacity smoke tests where contact
    boundaries would otherwise cap the reachable accuracy.
    """
    rng = np.random.default_rng(seed)
    w, d, h = spec.extent
    cw, gap = 2.0, 0.8

    def cell(i):
        return np.array([(i % 3) * (cw + gap), (i // 3) * (cw + gap), 0.0])

    floor_area = 1.6 * 1.6
    wall_area = 2 * 1.6 * h
    box_area = 2 * (0.8 * 0.8 + 2 * (0.8 + 0.8) * 0.6)
    n_floor = max(spec.min_points_per_class, int(floor_area * spec.density))
    n_wall = max(spec.min_points_per_class, int(wall_area * spec.density))
    n_box = max(spec.min_points_per_class, int(box_area * spec.density))
    n_base = n_floor + n_wall + n_box
    n_clutter = max(spec.min_points_per_class, int(spec.clutter_fraction * n_base))
    n_small = int(
        spec.small_object_fraction
        / max(1e-9, 1.0 - spec.small_object_fraction)
        * (n_base + n_clutter)
    )
    n_board = max(spec.min_points_per_class, n_small // 2)
    n_column = max(spec.min_points_per_class, n_small - n_board)

    chunks: list[tuple[np.ndarray, int]] = []
    chunks.append(
        (_sample_rect(rng, cell(0) + [0.2, 0.2, 0], (1.6, 0, 0), (0, 1.6, 0), n_floor), FLOOR)
    )
    half = n_wall // 2
    chunks.append(
        (_sample_rect(rng, cell(1) + [0.2, 0.6, 0], (1.6, 0, 0), (0, 0, h), half), WALL)
    )
    chunks.append(
        (_sample_rect(rng, cell(1) + [0.2, 1.6, 0], (1.6, 0, 0), (0, 0, h), n_wall - half), WALL)
    )
    per_box = rng.multinomial(n_box, [0.5, 0.5])
    for bi, c in enumerate(per_box):
        if c:
            corner = cell(2) + [0.2 + bi * 1.1, 0.4 + bi * 0.7, 0.0]
            chunks.append((_sample_box_surface(rng, corner, (0.8, 0.8, 0.6), c), BOX_FURNITURE))
    per_board = rng.multinomial(n_board, [0.5, 0.5])
    for bi, c in enumerate(per_board):
        if c:
            origin = cell(3) + [0.2 + bi * 1.0, 0.5 + bi * 0.8, 0.5]
            chunks.append(
                (_sample_rect(rng, origin, (0.9, 0, 0), (0, 0, 0.7), c), THIN_BOARD)
            )
    per_col = rng.multinomial(n_column, [0.5, 0.5])
    for ci, c in enumerate(per_col):
        if c:
            center = cell(4)[:2] + [0.6 + ci * 1.2, 0.6 + ci * 1.0]
            radius = rng.uniform(*spec.column_radius)
            chunks.append((_sample_cylinder(rng, center, radius, h, c), COLUMN))
    blob = cell(5) + [0.6, 0.6, 0.4]
    chunks.append((blob + rng.uniform(0, 0.8, (n_clutter, 3)), CLUTTER))
    return _finish(spec, rng, chunks)
