"""Ground-truth environments: watertight meshes and procedural voxel mazes."""
from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import geometry
from .surface_extract import TriSurface, extract_boundary, load_surface, write_obj, write_stl


class EnvironmentError(ValueError):
    pass


class EnvironmentMesh:
    """Closed triangle mesh bounding the free workspace."""

    def __init__(self, surface: TriSurface):
        if len(surface) == 0:
            raise EnvironmentError("environment mesh has no triangles")
        if not surface.is_watertight():
            raise EnvironmentError("environment mesh is not watertight")
        if surface.volume() <= 0:
            raise EnvironmentError("environment mesh normals must point out of the free space")
        self.surface = surface
        self.bvh = geometry.build_bvh(surface.corners)
        self.start = None  # optional suggested start position

    @classmethod
    def load(cls, path) -> "EnvironmentMesh":
        return cls(load_surface(path))

    @property
    def bounds(self):
        v = self.surface.vertices
        return v.min(axis=0), v.max(axis=0)

    @property
    def volume(self) -> float:
        return self.surface.volume()

    def contains(self, points) -> np.ndarray:
        return geometry.contains(self.bvh, points)

    def ray_cast(self, origins, dirs, tmax=np.inf) -> np.ndarray:
        return geometry.ray_cast(self.bvh, origins, dirs, tmax)

    def distance(self, points) -> np.ndarray:
        return geometry.point_distance(self.bvh, points)

    def voxelize(self, grid) -> np.ndarray:
        """Ground-truth free mask on ``grid``: cells whose centre lies inside."""
        idx = np.indices(grid.dims).reshape(3, -1).T
        inside = self.contains(grid.centers(idx))
        return inside.reshape(grid.dims)


def mesh_from_voxels(mask, origin, voxel: float) -> EnvironmentMesh:
    lattice = SimpleNamespace(dims=mask.shape, origin=np.asarray(origin, float),
                              cell_size=float(voxel))
    return EnvironmentMesh(extract_boundary(mask, lattice))


@dataclass
class Maze:
    free: np.ndarray             # voxel mask of the free space
    origin: np.ndarray           # world position of voxel (0, 0, 0)'s corner
    voxel: float
    rows: int
    cols: int
    passages: list = field(default_factory=list)  # maze-graph edges
    start_cell: tuple = (0, 0)
    dead_ends: list = field(default_factory=list)
    pitch: int = 4
    wall: int = 1

    @property
    def start(self) -> np.ndarray:
        """Centre of the start maze cell at mid height."""
        r, c = self.start_cell
        corridor = self.pitch - self.wall
        ijk = np.array([self.wall + r * self.pitch + corridor // 2,
                        self.wall + c * self.pitch + corridor // 2,
                        self.free.shape[2] // 2])
        return self.origin + (ijk + 0.5) * self.voxel

    def environment(self) -> EnvironmentMesh:
        env = mesh_from_voxels(self.free, self.origin, self.voxel)
        env.start = self.start
        return env


def generate_maze(rows: int = 3, cols: int = 3, seed: int = 0, corridor: int = 3,
                  wall: int = 1, height: int = 3, voxel: float = 0.25,
                  min_dead_ends: int = 1, max_dead_ends: int = 3,
                  max_tries: int = 1000) -> Maze:
    """Seeded perfect maze (randomised depth-first search) of voxel corridors.

    A dead end is a leaf of the maze tree other than the start cell.  Mazes
    are redrawn from the same generator until the dead-end count falls in
    ``[min_dead_ends, max_dead_ends]``.
    """
    if corridor < 1 or wall < 1 or height < 1:
        raise ValueError("corridor, wall and height must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        edges = _random_tree(rows, cols, rng)
        deg = np.zeros((rows, cols), dtype=int)
        for a, b in edges:
            deg[a] += 1
            deg[b] += 1
        leaves = [(r, c) for r in range(rows) for c in range(cols)
                  if deg[r, c] == 1 and (r, c) != (0, 0)]
        if min_dead_ends <= len(leaves) <= max_dead_ends:
            break
    else:
        raise ValueError("could not draw a maze with the requested dead-end count")

    pitch = corridor + wall
    shape = (rows * pitch + wall, cols * pitch + wall, height + 2)
    free = np.zeros(shape, dtype=bool)
    zs = slice(1, 1 + height)

    def span(i):
        lo = wall + i * pitch
        return slice(lo, lo + corridor)

    for r in range(rows):
        for c in range(cols):
            free[span(r), span(c), zs] = True
    for (r0, c0), (r1, c1) in edges:
        if r0 == r1:  # horizontal neighbours: open the wall between columns
            x = wall + min(c0, c1) * pitch + corridor
            free[span(r0), x:x + wall, zs] = True
        else:
            x = wall + min(r0, r1) * pitch + corridor
            free[x:x + wall, span(c0), zs] = True
    return Maze(free=free, origin=np.zeros(3), voxel=voxel, rows=rows, cols=cols,
                passages=edges, start_cell=(0, 0), dead_ends=leaves, pitch=pitch,
                wall=wall)


def _random_tree(rows, cols, rng):
    seen = np.zeros((rows, cols), dtype=bool)
    stack = [(0, 0)]
    seen[0, 0] = True
    edges = []
    while stack:
        r, c = stack[-1]
        nbrs = [(r + dr, c + dc) for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= r + dr < rows and 0 <= c + dc < cols and not seen[r + dr, c + dc]]
        if not nbrs:
            stack.pop()
            continue
        nxt = nbrs[rng.integers(len(nbrs))]
        seen[nxt] = True
        edges.append(((r, c), nxt))
        stack.append(nxt)
    return edges


def box_environment(lo, hi) -> EnvironmentMesh:
    """Single rectangular room."""
    from .fixtures import cube
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    s = cube(1)
    v = (s.vertices + 0.5) * (hi - lo) + lo
    env = EnvironmentMesh(TriSurface(v, s.triangles))
    env.start = (lo + hi) / 2
    return env


def write_environment(env: EnvironmentMesh, path) -> None:
    if str(path).lower().endswith(".obj"):
        write_obj(env.surface, path)
    else:
        write_stl(env.surface, path)
