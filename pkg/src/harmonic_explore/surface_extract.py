"""Closed triangulated boundary of the explored free space.

The free voxels are split into Freudenthal (Kuhn) tetrahedra, six per cube,
all sharing the cube's main diagonal.  Faces that belong to exactly one
tetrahedron form the boundary; because the split is conforming across
neighbouring cubes, only exposed cube faces survive, two triangles each.
"""
from __future__ import annotations

import csv
import itertools
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .bem.layers import triangle_frames

OCCUPIED = 1
FREE = 0
# Pr == threshold is ambiguous under "Pr >= threshold"; unknown (0.5) space
# must stay on the free side of the boundary.
THRESHOLD_DELTA = 1e-6


class SurfaceError(ValueError):
    pass


@dataclass(eq=False)
class TriSurface:
    vertices: np.ndarray
    triangles: np.ndarray
    cell_size: float | None = None
    # free cell (flat grid index) that owns each triangle, when grid-derived
    owner_cells: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)

    def __len__(self):
        return len(self.triangles)

    @cached_property
    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    @cached_property
    def frames(self):
        return triangle_frames(self.corners)

    @property
    def normals(self) -> np.ndarray:
        return self.frames[0]

    @property
    def areas(self) -> np.ndarray:
        return self.frames[3]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        c = self.corners
        return np.max(np.linalg.norm(c - np.roll(c, 1, axis=1), axis=-1), axis=1)

    @cached_property
    def keys(self) -> list[bytes]:
        """Orientation-aware geometric identity of each triangle."""
        q = np.round(self.corners * 2.0**24).astype(np.int64)
        # rotate each triangle so its lexicographically smallest vertex leads
        first = np.lexsort(q.transpose(2, 0, 1)[::-1], axis=-1)[:, 0]
        order = (first[:, None] + np.arange(3)) % 3
        q = np.take_along_axis(q, order[:, :, None], axis=1)
        return [row.tobytes() for row in q.reshape(len(q), 9)]

    @cached_property
    def centroid_keys(self) -> list[bytes]:
        q = np.round(self.centroids * 2.0**24).astype(np.int64)
        return [row.tobytes() for row in q]

    def volume(self) -> float:
        return float(np.sum(self.areas * np.einsum("ij,ij->i", self.centroids,
                                                    self.normals)) / 3.0)

    def edge_counts(self):
        """Map undirected edge -> (count, directed balance)."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        und = np.sort(e, axis=1)
        sign = np.where(e[:, 0] < e[:, 1], 1, -1)
        uniq, inv, counts = np.unique(und, axis=0, return_inverse=True,
                                      return_counts=True)
        balance = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(balance, inv.ravel(), sign)
        return uniq, counts, balance

    def is_watertight(self) -> bool:
        _, counts, balance = self.edge_counts()
        return bool(np.all(counts == 2) and np.all(balance == 0))

    def euler_characteristic(self) -> int:
        uniq, _, _ = self.edge_counts()
        used = np.unique(self.triangles)
        return int(len(used) - len(uniq) + len(self.triangles))

    @cached_property
    def bvh(self):
        from .geometry import build_bvh
        return build_bvh(self.corners)

    def distance(self, points) -> np.ndarray:
        from .geometry import point_distance
        return point_distance(self.bvh, np.atleast_2d(points))

    def subset(self, mask) -> "TriSurface":
        return TriSurface(self.vertices, self.triangles[mask], self.cell_size)


@dataclass(eq=False)
class BoundaryData:
    probability: np.ndarray
    label: np.ndarray
    k_hat: np.ndarray = field(default=None)
    k_target: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.probability)
        if self.k_hat is None:
            self.k_hat = np.zeros(n)
        if self.k_target is None:
            self.k_target = np.zeros(n)

    @property
    def occupied(self) -> np.ndarray:
        return self.label == OCCUPIED

    @property
    def free(self) -> np.ndarray:
        return self.label == FREE


# -- Freudenthal split -------------------------------------------------------

def _kuhn_tets():
    tets = []
    eye = np.eye(3, dtype=np.int64)
    for perm in itertools.permutations(range(3)):
        a = np.zeros(3, dtype=np.int64)
        b = eye[perm[0]]
        c = b + eye[perm[1]]
        d = np.ones(3, dtype=np.int64)
        if np.linalg.det(np.array([b - a, c - a, d - a], dtype=float)) < 0:
            b, c = c, b
        tets.append([a, b, c, d])
    return np.array(tets)  # (6, 4, 3)


_KUHN = _kuhn_tets()
# outward faces of a positively oriented tet (a, b, c, d)
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def extract_boundary(free_cells, grid) -> TriSurface:
    """Boundary surface of a set of free voxels.

    ``free_cells`` is a boolean mask over ``grid.dims`` or an ``(M, 3)`` array
    of cell indices.
    """
    cells = _as_cell_array(free_cells, grid.dims)
    if len(cells) == 0:
        raise SurfaceError("cannot extract a boundary from an empty cell set")

    # lattice coordinates are doubled so split-edge midpoints stay integral
    tet_pts = 2 * (cells[:, None, None, :] + _KUHN[None])  # (C, 6, 4, 3)
    faces = tet_pts[:, :, _TET_FACES]  # (C, 6, 4, 3, 3)
    owner = np.repeat(np.arange(len(cells)), 24)
    faces = faces.reshape(-1, 3, 3)

    span = 2 * np.asarray(grid.dims, dtype=np.int64) + 1
    ids = (faces[..., 0] * span[1] + faces[..., 1]) * span[2] + faces[..., 2]
    _, inv, counts = np.unique(np.sort(ids, axis=1), axis=0, return_inverse=True,
                               return_counts=True)
    keep = counts[inv.ravel()] == 1
    faces = faces[keep]
    owner = owner[keep]

    lattice, tri = np.unique(faces.reshape(-1, 3), axis=0, return_inverse=True)
    tri = tri.reshape(-1, 3)
    lattice, tri, owner = _split_nonmanifold_edges(lattice, tri, owner)

    flat_owner = np.ravel_multi_index(cells[owner].T, grid.dims)
    verts = np.asarray(grid.origin, dtype=float) + lattice * (grid.cell_size / 2.0)
    return TriSurface(verts, tri, cell_size=grid.cell_size, owner_cells=flat_owner)


def _split_nonmanifold_edges(lattice, tri, owner):
    """Separate edges where two free cells touch only along that edge.

    Each owning cell contributes a consistently oriented pair of triangles at
    such an edge; every pair gets its own midpoint so each resulting edge is
    shared by exactly two triangles.
    """
    while True:
        e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        uniq, inv, counts = np.unique(np.sort(e, axis=1), axis=0,
                                      return_inverse=True, return_counts=True)
        inv = inv.ravel()
        bad = np.flatnonzero(counts > 2)
        if len(bad) == 0:
            return lattice, tri, owner
        touched = np.zeros(len(tri), dtype=bool)
        keep = np.ones(len(tri), dtype=bool)
        add_tri, add_owner, add_pts = [], [], []
        n_pts = len(lattice)
        for edge in bad:
            hits = np.flatnonzero(inv == edge) % len(tri)
            if touched[hits].any():
                continue  # triangle already split this pass; retry next pass
            touched[hits] = True
            a, b = uniq[edge]
            for cell in np.unique(owner[hits]):
                m = n_pts
                n_pts += 1
                add_pts.append((lattice[a] + lattice[b]) // 2)
                for t in hits[owner[hits] == cell]:
                    v = tri[t]
                    k = next(i for i in range(3) if {v[i], v[(i + 1) % 3]} == {a, b})
                    p, q, r = v[k], v[(k + 1) % 3], v[(k + 2) % 3]
                    add_tri += [[p, m, r], [m, q, r]]
                    add_owner += [cell, cell]
                    keep[t] = False
        lattice = np.vstack([lattice, np.array(add_pts)])
        tri = np.vstack([tri[keep], np.array(add_tri, dtype=np.int64)])
        owner = np.concatenate([owner[keep], np.array(add_owner, dtype=owner.dtype)])


def _as_cell_array(free_cells, dims):
    arr = np.asarray(free_cells)
    if arr.dtype == bool:
        if arr.shape != tuple(dims):
            raise SurfaceError(f"mask shape {arr.shape} does not match grid {tuple(dims)}")
        return np.argwhere(arr)
    return arr.reshape(-1, 3).astype(np.int64)


def exposed_face_count(mask) -> int:
    """Number of voxel faces between a cell in ``mask`` and one outside it."""
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    total = 0
    for ax in range(3):
        total += int(np.count_nonzero(m != np.roll(m, 1, axis=ax)))
    return total


def attach_occupancy(surface: TriSurface, grid, threshold: float) -> BoundaryData:
    """Probability and occupied/free label for every boundary triangle.

    Each triangle is probed half a cell beyond its face, i.e. in the non-free
    neighbour cell.  Probes outside the grid read as unobserved.
    """
    probe = surface.centroids + 0.5 * grid.cell_size * surface.normals
    pr = grid.probability_at(probe, outside=0.5)
    label = np.where(pr >= threshold + THRESHOLD_DELTA, OCCUPIED, FREE)
    return BoundaryData(probability=pr, label=label)


# -- export ------------------------------------------------------------------

def write_stl(surface: TriSurface, path) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(b"harmonic_explore surface".ljust(80, b" "))
        fh.write(struct.pack("<I", len(surface)))
        rec = np.zeros(len(surface), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)),
                                            ("attr", "<u2")])
        rec["n"] = surface.normals
        rec["v"] = surface.corners
        fh.write(rec.tobytes())


def read_stl(path) -> TriSurface:
    data = Path(path).read_bytes()
    (count,) = struct.unpack_from("<I", data, 80)
    rec = np.frombuffer(data, offset=84, count=count,
                        dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    corners = rec["v"].astype(float).reshape(-1, 3)
    verts, tri = np.unique(corners, axis=0, return_inverse=True)
    return TriSurface(verts, tri.reshape(-1, 3))


def write_obj(surface: TriSurface, path) -> None:
    with Path(path).open("w") as fh:
        for v in surface.vertices.tolist():
            fh.write(f"v {v[0]!r} {v[1]!r} {v[2]!r}\n")
        for t in (surface.triangles + 1).tolist():
            fh.write(f"f {t[0]} {t[1]} {t[2]}\n")


def read_obj(path) -> TriSurface:
    verts, tris = [], []
    with Path(path).open() as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                for k in range(1, len(idx) - 1):
                    tris.append([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1])
    return TriSurface(np.array(verts), np.array(tris))


def load_surface(path) -> TriSurface:
    path = Path(path)
    if path.suffix.lower() == ".stl":
        return read_stl(path)
    return read_obj(path)


BOUNDARY_COLUMNS = ("element_id", "cx", "cy", "cz", "area", "nx", "ny", "nz",
                    "Pr", "class", "k_hat", "k_target")


def write_boundary_csv(surface: TriSurface, data: BoundaryData, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BOUNDARY_COLUMNS)
        for i in range(len(surface)):
            c, n = surface.centroids[i], surface.normals[i]
            w.writerow([i, *map(repr, c), repr(surface.areas[i]), *map(repr, n),
                        repr(float(data.probability[i])),
                        "occupied" if data.label[i] == OCCUPIED else "free",
                        repr(float(data.k_hat[i])), repr(float(data.k_target[i]))])
