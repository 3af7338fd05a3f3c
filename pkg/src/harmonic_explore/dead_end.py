"""Closing fully explored dead ends behind trajectory-normal planar patches."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid_map import PATCH_PROBABILITY, VoxelGrid
from .surface_extract import THRESHOLD_DELTA

_SIX = ndimage.generate_binary_structure(3, 1)
_TWENTY_SIX = np.ones((3, 3, 3), dtype=bool)


@dataclass
class PlanarPatch:
    anchor: np.ndarray
    normal: np.ndarray
    cells: np.ndarray   # boolean mask over the grid

    @property
    def size(self) -> int:
        return int(self.cells.sum())


@dataclass
class CloseEvent:
    t: float
    anchor: np.ndarray
    accepted: bool
    reason: str
    removed: int


def subsample(trajectory, spacing: float) -> np.ndarray:
    """Points of a polyline spaced at least ``spacing`` apart in arc length."""
    traj = np.asarray(trajectory, dtype=float)
    if len(traj) == 0:
        return traj.reshape(0, 3)
    seg = np.linalg.norm(np.diff(traj, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    keep = [0]
    for i in range(1, len(traj)):
        if arc[i] - arc[keep[-1]] >= spacing:
            keep.append(i)
    return traj[keep]


def tangents(points) -> np.ndarray:
    """Central differences inside, one-sided at the ends."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return np.zeros_like(pts)
    return np.gradient(pts, axis=0)


def find_patch(point, tangent, grid: VoxelGrid, free) -> PlanarPatch | None:
    """Free cells in a one-cell slab normal to ``tangent`` around ``point``.

    The slab holds cells whose centre lies within ``|n|_1 * cell / 2`` of the
    plane (half a cell for axis-aligned normals, thick enough to leave no
    face-connected gaps otherwise).  Only the slab piece connected to the
    anchor cell is kept.
    """
    t = np.asarray(tangent, dtype=float)
    norm = np.linalg.norm(t)
    if norm < 1e-12:
        return None
    n = t / norm
    point = np.asarray(point, dtype=float)
    anchor = tuple(grid.cell_index(point)[0])
    if not free[anchor]:
        return None
    idx = np.argwhere(free)
    off = (grid.centers(idx) - point) @ n
    half = 0.5 * grid.cell_size * np.abs(n).sum() * (1.0 + 1e-9)
    slab = np.zeros(grid.dims, dtype=bool)
    inside = idx[np.abs(off) <= half]
    slab[tuple(inside.T)] = True
    if not slab[anchor]:
        return None
    labels, _ = ndimage.label(slab, structure=_TWENTY_SIX)
    return PlanarPatch(point, n, labels == labels[anchor])


def try_close(patch: PlanarPatch, grid: VoxelGrid, robot_cell, free,
              threshold: float = 0.5):
    """Close the region cut off by ``patch`` if it is a finished dead end.

    Returns ``(accepted, reason, removed_mask)``.  On acceptance the region is
    written as unknown (0.5) and the patch as occupied (0.99), both locked.
    """
    robot_cell = tuple(int(v) for v in robot_cell)
    if patch.cells[robot_cell]:
        return False, "patch contains robot", None
    near = np.zeros(grid.dims, dtype=bool)
    near[robot_cell] = True
    near = ndimage.binary_dilation(near, structure=_TWENTY_SIX)
    if np.any(near & patch.cells):
        return False, "patch adjacent to robot", None
    rest = free & ~patch.cells
    labels, count = ndimage.label(rest, structure=_SIX)
    if count != 2:
        return False, f"split into {count} parts", None
    robot_label = labels[robot_cell]
    if robot_label == 0:
        return False, "robot not in free space", None
    region = (labels > 0) & (labels != robot_label)
    # every face of the region must border its own cells, the patch, or an
    # occupied cell; anything else (unknown, grid edge) is a frontier
    pr = grid.probability
    occupied = pr >= threshold + THRESHOLD_DELTA
    ok = region | patch.cells | occupied
    padded = np.pad(ok, 1, constant_values=False)
    for ax in range(3):
        for sh in (-1, 1):
            nb = np.roll(padded, sh, axis=ax)[1:-1, 1:-1, 1:-1]
            if np.any(region & ~nb):
                return False, "region has free boundary", None
    grid.set_probability(region, 0.5, lock=True)
    grid.set_probability(patch.cells, PATCH_PROBABILITY, lock=True)
    return True, "closed", region


def close_dead_ends(grid: VoxelGrid, trajectory, robot_position, threshold: float = 0.5,
                    t: float = 0.0, spacing: float | None = None, max_sweeps: int = 4):
    """Try every trajectory sample until no further patch is accepted.

    Returns the list of :class:`CloseEvent` records.
    """
    spacing = 2.0 * grid.cell_size if spacing is None else spacing
    pts = subsample(trajectory, spacing)
    tans = tangents(pts)
    robot_cell = grid.cell_index(robot_position)[0]
    events = []
    for _ in range(max_sweeps):
        accepted_any = False
        for p, tan in zip(pts, tans):
            free = grid.free_component(robot_position, threshold)
            if not grid.contains_point(p)[0]:
                continue
            patch = find_patch(p, tan, grid, free)
            if patch is None:
                continue
            ok, reason, region = try_close(patch, grid, robot_cell, free, threshold)
            removed = int(region.sum()) if ok else 0
            events.append(CloseEvent(t, p.copy(), ok, reason, removed))
            accepted_any |= ok
        if not accepted_any:
            break
    return events


def write_events(events, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "anchor_x", "anchor_y", "anchor_z", "decision", "reason",
                    "removed_cell_count"])
        for e in events:
            w.writerow([repr(e.t), *map(repr, e.anchor.tolist()),
                        "accepted" if e.accepted else "rejected", e.reason, e.removed])
