"""Log-odds voxel occupancy grid and a simulated spherical range sensor."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage


class GridError(ValueError):
    """Query or update outside the grid's domain."""


def logit(p):
    return np.log(p / (1.0 - p))


L_CLAMP = float(logit(0.97))
# log-odds written for a closed dead-end patch; deliberately outside the clamp
PATCH_PROBABILITY = 0.99


@dataclass(frozen=True)
class SensorConfig:
    range: float = 3.0
    ray_count: int = 2000
    p_hit: float = 0.7
    p_miss: float = 0.4

    def __post_init__(self):
        if not 0.5 < self.p_hit < 1.0:
            raise ValueError(f"p_hit must lie in (0.5, 1), got {self.p_hit}")
        if not 0.0 < self.p_miss < 0.5:
            raise ValueError(f"p_miss must lie in (0, 0.5), got {self.p_miss}")
        if self.range <= 0:
            raise ValueError(f"sensor range must be positive, got {self.range}")
        if self.ray_count < 1:
            raise ValueError("ray_count must be positive")


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` quasi-uniform unit vectors (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])


MISS = np.int8(1)
HIT = np.int8(2)


@numba.njit(cache=True)
def _trace(origin, dirs, dists, rmax, gorigin, cs, dims, blocked, status):
    """Amanatides-Woo traversal; writes MISS/HIT marks into ``status``.

    A hit always overrides a miss within one scan.  Rays stop without
    marking when they leave the grid or enter a ``blocked`` cell.
    """
    nx, ny, nz = dims[0], dims[1], dims[2]
    cell = np.empty(3, dtype=np.int64)
    step = np.empty(3, dtype=np.int64)
    tmax = np.empty(3)
    tdelta = np.empty(3)
    for r in range(dirs.shape[0]):
        d = dirs[r]
        thit = dists[r]
        has_hit = thit <= rmax
        tend = thit if has_hit else rmax
        tol = 1e-9 * cs
        for k in range(3):
            u = (origin[k] - gorigin[k]) / cs
            c = int(np.floor(u))
            cell[k] = c
            if d[k] > 0.0:
                step[k] = 1
                tmax[k] = ((c + 1) * cs + gorigin[k] - origin[k]) / d[k]
                tdelta[k] = cs / d[k]
            elif d[k] < 0.0:
                step[k] = -1
                tmax[k] = (c * cs + gorigin[k] - origin[k]) / d[k]
                tdelta[k] = -cs / d[k]
            else:
                step[k] = 0
                tmax[k] = np.inf
                tdelta[k] = np.inf
        tenter = 0.0
        while True:
            i, j, k = cell[0], cell[1], cell[2]
            if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                break
            if blocked[i, j, k]:
                break
            texit = min(tmax[0], tmax[1], tmax[2])
            if has_hit and texit > thit + tol:
                status[i, j, k] = HIT
                break
            if not has_hit and tenter >= tend:
                break
            if status[i, j, k] == 0:
                status[i, j, k] = MISS
            a = 0
            if tmax[1] < tmax[a]:
                a = 1
            if tmax[2] < tmax[a]:
                a = 2
            tenter = tmax[a]
            cell[a] += step[a]
            tmax[a] += tdelta[a]


class VoxelGrid:
    """Occupancy lattice; cell ``(i, j, k)`` spans ``origin + [i, i+1] * cell_size``."""

    def __init__(self, origin, cell_size: float, dims, l_min: float = -L_CLAMP,
                 l_max: float = L_CLAMP):
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.cell_size = float(cell_size)
        self.dims = tuple(int(d) for d in dims)
        if self.cell_size <= 0 or min(self.dims) < 1:
            raise GridError("cell_size and dims must be positive")
        if not l_min < 0.0 < l_max:
            raise GridError("clamp bounds must straddle zero")
        self.l_min, self.l_max = float(l_min), float(l_max)
        self.log_odds = np.zeros(self.dims)
        # cells excluded from sensing (closed dead ends and their patches)
        self.locked = np.zeros(self.dims, dtype=bool)
        # cells ever classified free; drives the coverage metric
        self.ever_free = np.zeros(self.dims, dtype=bool)

    @classmethod
    def covering(cls, lo, hi, cell_size: float, margin: int = 1, **kw) -> "VoxelGrid":
        lo = np.asarray(lo, float) - margin * cell_size
        n = np.ceil((np.asarray(hi, float) + margin * cell_size - lo) / cell_size - 1e-9)
        return cls(lo, cell_size, n.astype(int), **kw)

    def copy(self) -> "VoxelGrid":
        g = VoxelGrid(self.origin, self.cell_size, self.dims, self.l_min, self.l_max)
        g.log_odds = self.log_odds.copy()
        g.locked = self.locked.copy()
        g.ever_free = self.ever_free.copy()
        return g

    # -- geometry ----------------------------------------------------------

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.cell_size * np.asarray(self.dims)

    def centers(self, cells) -> np.ndarray:
        return self.origin + (np.asarray(cells, dtype=float) + 0.5) * self.cell_size

    def contains_point(self, q) -> np.ndarray:
        q = np.atleast_2d(q)
        t = (q - self.origin) / self.cell_size
        return np.all((t >= 0) & (t <= np.asarray(self.dims)), axis=-1)

    def cell_index(self, q) -> np.ndarray:
        """Containing cell with face ties going to the smaller index.

        Raises :class:`GridError` for points outside the grid.
        """
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if not np.all(self.contains_point(q)):
            bad = q[~self.contains_point(q)][0]
            raise GridError(f"point {bad.tolist()} lies outside the grid")
        return self._cell_index_unchecked(q)

    def _cell_index_unchecked(self, q):
        t = (q - self.origin) / self.cell_size
        idx = np.ceil(t).astype(np.int64) - 1
        return np.clip(idx, 0, np.asarray(self.dims) - 1)

    # -- probabilities -----------------------------------------------------

    @property
    def probability(self) -> np.ndarray:
        return 1.0 - 1.0 / (1.0 + np.exp(self.log_odds))

    def probability_at(self, q, outside=None):
        """Probability of the cell containing each point in ``q``.

        Points outside the grid raise unless ``outside`` supplies a value.
        """
        q = np.asarray(q, dtype=float)
        single = q.ndim == 1
        q = np.atleast_2d(q)
        inside = self.contains_point(q)
        if outside is None and not np.all(inside):
            raise GridError(f"point {q[~inside][0].tolist()} lies outside the grid")
        out = np.full(len(q), float(outside) if outside is not None else np.nan)
        idx = self._cell_index_unchecked(q[inside])
        lo = self.log_odds[idx[:, 0], idx[:, 1], idx[:, 2]]
        out[inside] = 1.0 - 1.0 / (1.0 + np.exp(lo))
        return out[0] if single else out

    def free_mask(self, threshold: float = 0.5) -> np.ndarray:
        # only observed-free cells count; unknown cells (exactly 0.5) never do
        return (self.log_odds < 0.0) & (self.probability < threshold)

    def free_component(self, seed, threshold: float = 0.5) -> np.ndarray:
        """Boolean mask of the 6-connected free component containing ``seed``."""
        cell = tuple(self.cell_index(seed)[0])
        free = self.free_mask(threshold)
        if not free[cell]:
            pr = float(self.probability[cell])
            raise GridError(f"seed cell {cell} is not free (Pr = {pr:.6g})")
        labels, _ = ndimage.label(free)  # default structure is 6-connected
        return labels == labels[cell]

    # -- sensing -----------------------------------------------------------

    def integrate_rays(self, position, dirs, hit_dist, cfg: SensorConfig) -> np.ndarray:
        """Apply one scan given per-ray hit distances (``inf`` for no return).

        Each cell receives at most one update per scan, with hits taking
        precedence over misses.  Returns the per-cell mark array.
        """
        position = np.asarray(position, dtype=float)
        dirs = np.ascontiguousarray(dirs, dtype=float)
        hit_dist = np.ascontiguousarray(np.broadcast_to(hit_dist, len(dirs)), dtype=float)
        status = np.zeros(self.dims, dtype=np.int8)
        _trace(position, dirs, hit_dist, float(cfg.range), self.origin, self.cell_size,
               np.asarray(self.dims, dtype=np.int64), self.locked, status)
        lo = self.log_odds
        lo[status == MISS] += logit(cfg.p_miss)
        lo[status == HIT] += logit(cfg.p_hit)
        np.clip(lo, self.l_min, self.l_max, out=lo, where=~self.locked)
        self.ever_free |= self.free_mask()
        return status

    def integrate_scan(self, position, env, cfg: SensorConfig) -> np.ndarray:
        """Simulate a full spherical scan from ``position`` against ``env``."""
        position = np.asarray(position, dtype=float)
        if not env.contains(position[None])[0]:
            raise GridError(f"sensor position {position.tolist()} is not inside the environment")
        dirs = fibonacci_directions(cfg.ray_count)
        dist = env.ray_cast(position, dirs, tmax=cfg.range * 1.001)
        return self.integrate_rays(position, dirs, dist, cfg)

    # -- dead-end support --------------------------------------------------

    def set_probability(self, mask, p: float, lock: bool = True) -> None:
        """Overwrite cells with an exact probability (bypasses the clamp)."""
        self.log_odds[mask] = 0.0 if p == 0.5 else logit(p)
        if lock:
            self.locked[mask] = True

    # -- I/O ---------------------------------------------------------------

    def write_vtk(self, path) -> None:
        nx, ny, nz = self.dims
        spacing = " ".join([repr(self.cell_size)] * 3)
        centre0 = self.origin + 0.5 * self.cell_size
        pr = self.probability.ravel(order="F")
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\noccupancy probability\nASCII\n")
            fh.write("DATASET STRUCTURED_POINTS\n")
            fh.write(f"DIMENSIONS {nx} {ny} {nz}\n")
            fh.write("ORIGIN {} {} {}\n".format(*map(repr, centre0.tolist())))
            fh.write(f"SPACING {spacing}\n")
            fh.write(f"POINT_DATA {pr.size}\nSCALARS probability float 1\n")
            fh.write("LOOKUP_TABLE default\n")
            np.savetxt(fh, pr.reshape(-1, 1), fmt="%.7g")

    _HEADER = struct.Struct("<4d3i")

    def write_binary(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self._HEADER.pack(*self.origin, self.cell_size, *self.dims))
            fh.write(self.log_odds.ravel(order="F").astype("<f4").tobytes())

    @classmethod
    def read_binary(cls, path) -> "VoxelGrid":
        raw = Path(path).read_bytes()
        hdr = cls._HEADER.unpack_from(raw)
        origin, cs, dims = hdr[:3], hdr[3], hdr[4:]
        g = cls(origin, cs, dims)
        data = np.frombuffer(raw, dtype="<f4", offset=cls._HEADER.size)
        g.log_odds = data.reshape(dims, order="F").astype(float)
        return g
