"""Adaptive octree over element centroids with dual-tree interaction lists."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_LEVEL = 20
DEFAULT_LEAF_CAPACITY = 50


def _spread_bits(v):
    """Interleave-ready spreading of 21-bit integers (x -> every third bit)."""
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton(ijk) -> np.ndarray:
    ijk = np.asarray(ijk)
    return (_spread_bits(ijk[:, 0]) << np.uint64(2)) | (_spread_bits(ijk[:, 1]) << np.uint64(1)) \
        | _spread_bits(ijk[:, 2])


@dataclass(eq=False)
class Octree:
    center: np.ndarray        # (M, 3) box centres
    half: np.ndarray          # (M,) box half widths
    level: np.ndarray         # (M,)
    parent: np.ndarray        # (M,) -1 for the root
    octant: np.ndarray        # (M,) position within the parent (0..7)
    children: np.ndarray      # (M, 8) child node ids, -1 where pruned
    start: np.ndarray         # (M,) first sorted element
    stop: np.ndarray          # (M,) one past the last sorted element
    radius: np.ndarray        # (M,) bounding-sphere radius about ``center``
    perm: np.ndarray          # sorted slot -> element id
    lattice: np.ndarray       # (M, 3) integer centre coordinates, unit = root half / 2**MAX_LEVEL
    leaf_capacity: int

    @property
    def n_nodes(self) -> int:
        return len(self.level)

    @property
    def is_leaf(self) -> np.ndarray:
        return np.all(self.children < 0, axis=1)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf)

    @property
    def depth(self) -> int:
        return int(self.level.max())

    def leaf_of_elements(self) -> np.ndarray:
        """Leaf id for every element (original numbering)."""
        out = np.empty(len(self.perm), dtype=np.int64)
        for leaf in self.leaves:
            out[self.perm[self.start[leaf]:self.stop[leaf]]] = leaf
        return out


def build_tree(centroids, corners=None, leaf_capacity: int = DEFAULT_LEAF_CAPACITY) -> Octree:
    """Adaptive octree; boxes split until they hold ``<= leaf_capacity`` elements."""
    x = np.atleast_2d(np.asarray(centroids, dtype=float))
    n = len(x)
    if n < 1:
        raise ValueError("cannot build a tree over zero elements")
    if leaf_capacity < 1:
        raise ValueError("leaf_capacity must be positive")
    lo, hi = x.min(axis=0), x.max(axis=0)
    root_c = 0.5 * (lo + hi)
    root_h = max(0.5 * float(np.max(hi - lo)), 1e-12) * (1.0 + 1e-9)
    cells = 2 ** MAX_LEVEL
    ijk = np.floor((x - (root_c - root_h)) / (2 * root_h) * cells).astype(np.int64)
    ijk = np.clip(ijk, 0, cells - 1)
    codes = morton(ijk)
    perm = np.argsort(codes, kind="stable")
    codes = codes[perm]

    center, half, level, parent, octant, start, stop = [], [], [], [], [], [], []
    children = []

    def add(c, h, lev, par, octn, s, e):
        center.append(c)
        half.append(h)
        level.append(lev)
        parent.append(par)
        octant.append(octn)
        start.append(s)
        stop.append(e)
        children.append([-1] * 8)
        return len(level) - 1

    add(root_c, root_h, 0, -1, 0, 0, n)
    queue = [0]
    while queue:
        node = queue.pop()
        s, e, lev = start[node], stop[node], level[node]
        if e - s <= leaf_capacity or lev >= MAX_LEVEL:
            continue
        shift = np.uint64(3 * (MAX_LEVEL - lev - 1))
        digit = ((codes[s:e] >> shift) & np.uint64(7)).astype(np.int64)
        bounds = np.searchsorted(digit, np.arange(9)) + s
        h = half[node] / 2.0
        for o in range(8):
            a, b = bounds[o], bounds[o + 1]
            if b <= a:
                continue
            off = np.array([(o >> 2) & 1, (o >> 1) & 1, o & 1]) * 2.0 - 1.0
            child = add(center[node] + off * h, h, lev + 1, node, o, a, b)
            children[node][o] = child
            queue.append(child)

    center = np.array(center)
    level = np.array(level, dtype=np.int64)
    lattice = np.rint((center - root_c) / root_h * cells).astype(np.int64)
    start = np.array(start, dtype=np.int64)
    stop = np.array(stop, dtype=np.int64)

    # bounding radius about each box centre, covering the element supports
    pts = x[perm] if corners is None else np.asarray(corners, float)[perm]
    pts = pts.reshape(n, -1, 3)
    radius = np.zeros(len(level))
    for node in range(len(level)):
        d = pts[start[node]:stop[node]] - center[node]
        radius[node] = np.sqrt(np.max(np.einsum("kqd,kqd->kq", d, d)))

    return Octree(center=center, half=np.array(half), level=level,
                  parent=np.array(parent, dtype=np.int64),
                  octant=np.array(octant, dtype=np.int64),
                  children=np.array(children, dtype=np.int64), start=start, stop=stop,
                  radius=radius, perm=perm, lattice=lattice, leaf_capacity=leaf_capacity)


def interaction_lists(tree: Octree, theta: float, target_radius=None,
                      source_radius=None):
    """Dual-tree traversal from (root, root).

    A (target, source) pair is far when ``r_t + r_s < theta * |c_t - c_s|``;
    otherwise the node with the larger radius is split (or the non-leaf one)
    until both are leaves, which makes the pair near.  Radii default to the
    tree's bounding radii.  Returns two ``(K, 2)`` arrays of (target, source)
    node ids that together cover every element pair exactly once.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    rt = tree.radius if target_radius is None else target_radius
    rs = tree.radius if source_radius is None else source_radius
    size = np.maximum(rt, rs)
    leaf = tree.is_leaf
    far, near = [], []
    pairs = np.array([[0, 0]], dtype=np.int64)
    while len(pairs):
        t, s = pairs[:, 0], pairs[:, 1]
        dist = np.linalg.norm(tree.center[t] - tree.center[s], axis=1)
        adm = (rt[t] + rs[s] < theta * dist) & (t != s)
        far.append(pairs[adm])
        rest = pairs[~adm]
        t, s = rest[:, 0], rest[:, 1]
        both = leaf[t] & leaf[s]
        near.append(rest[both])
        rest = rest[~both]
        if not len(rest):
            break
        t, s = rest[:, 0], rest[:, 1]
        self_pair = t == s
        split_t = ~leaf[t] & (leaf[s] | (size[t] >= size[s]))
        new = []
        st = rest[split_t & ~self_pair]
        if len(st):
            new.append(np.column_stack([tree.children[st[:, 0]].ravel(),
                                        np.repeat(st[:, 1], 8)]))
        ss = rest[~split_t & ~self_pair]
        if len(ss):
            new.append(np.column_stack([np.repeat(ss[:, 0], 8),
                                        tree.children[ss[:, 1]].ravel()]))
        sp = rest[self_pair]
        if len(sp):
            # a node against itself: all ordered pairs of its children
            ch = tree.children[sp[:, 0]]
            new.append(np.column_stack([np.repeat(ch, 8, axis=1).ravel(),
                                        np.tile(ch, (1, 8)).ravel()]))
        pairs = np.concatenate(new)
        pairs = pairs[(pairs[:, 0] >= 0) & (pairs[:, 1] >= 0)]
    cat = lambda lst: np.concatenate(lst) if lst else np.empty((0, 2), dtype=np.int64)
    return cat(far), cat(near)
