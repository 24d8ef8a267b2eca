"""Rectangular tensor-product grids on boxes, plus boundary bookkeeping.

Nodes along axis k are x_k = lo_k + i*h_k for i = 0..n_k-1 with
h_k = (hi_k - lo_k)/(n_k - 1).  Arrays over a grid are indexed
[i_1, i_2(, i_3)], axis 0 being the first coordinate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "Grid",
    "Segment",
    "boundary_node_indices",
    "boundary_outward_normal",
    "is_corner_node",
]


@dataclass(frozen=True)
class Grid:
    """A uniform node-centered grid on an axis-aligned box."""

    extents: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        ext = tuple((float(a), float(b)) for a, b in self.extents)
        res = tuple(int(n) for n in self.resolution)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "resolution", res)
        if len(ext) != len(res):
            raise ConfigError("grid: extents and resolution lengths differ")
        if len(ext) not in (2, 3):
            raise ConfigError(f"grid: dimension must be 2 or 3, got {len(ext)}")
        for k, ((a, b), n) in enumerate(zip(ext, res)):
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise ConfigError(f"grid: axis {k + 1} extent [{a}, {b}] is invalid")
            if n < 3:
                raise ConfigError(f"grid: axis {k + 1} needs >= 3 nodes, got {n}")

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def origin(self) -> np.ndarray:
        return np.array([a for a, _ in self.extents])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.extents])

    @property
    def spacing(self) -> np.ndarray:
        return np.array(
            [(b - a) / (n - 1) for (a, b), n in zip(self.extents, self.resolution)]
        )

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.resolution))

    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(a, b, n)
            for (a, b), n in zip(self.extents, self.resolution)
        ]

    def mesh(self) -> list[np.ndarray]:
        """Coordinate arrays of shape ``resolution``, one per axis."""
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def node_coordinates(self) -> np.ndarray:
        """All node coordinates, shape (num_nodes, dim), axis-0 index fastest."""
        mesh = self.mesh()
        return np.stack([m.ravel(order="F") for m in mesh], axis=-1)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo = self.origin - tol * (1.0 + np.abs(self.origin))
        hi = self.upper + tol * (1.0 + np.abs(self.upper))
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def require_inside(self, points: np.ndarray, what: str = "point") -> None:
        ok = self.contains(points)
        if not np.all(ok):
            bad = np.atleast_2d(np.asarray(points, dtype=float))[~ok]
            raise DomainError(
                f"{what} outside domain: first offender {bad[0].tolist()}"
            )

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.extents, tuple((n - 1) * factor + 1 for n in self.resolution))

    def hash_str(self) -> str:
        key = repr((self.dim, self.extents, self.resolution)).encode()
        return hashlib.sha256(key).hexdigest()[:12]

    def header_dict(self) -> dict:
        return {
            "dim": self.dim,
            "extents": [list(e) for e in self.extents],
            "resolution": list(self.resolution),
        }

    @classmethod
    def from_header_dict(cls, d: dict) -> "Grid":
        return cls(
            tuple(tuple(e) for e in d["extents"]), tuple(d["resolution"])
        )

    def axis_slab(self, lo: float, hi: float, axis: int = 0):
        """Subgrid covering [lo, hi] along one axis (bounding node planes).

        Returns the subgrid and the inclusive node-index range (i0, i1)
        along the sliced axis.
        """
        a, _ = self.extents[axis]
        h = self.spacing[axis]
        n = self.resolution[axis]
        i0 = max(0, int(np.floor((lo - a) / h + 1e-9)))
        i1 = min(n - 1, int(np.ceil((hi - a) / h - 1e-9)))
        if i1 <= i0:
            raise ConfigError(f"axis_slab: [{lo}, {hi}] selects < 2 node planes")
        ext = list(self.extents)
        ext[axis] = (a + i0 * h, a + i1 * h)
        res = list(self.resolution)
        res[axis] = i1 - i0 + 1
        return Grid(tuple(ext), tuple(res)), (i0, i1)


@dataclass(frozen=True)
class Segment:
    """Directed straight segment between two points."""

    start: tuple[float, ...]
    end: tuple[float, ...]

    def __post_init__(self):
        s = tuple(float(v) for v in self.start)
        e = tuple(float(v) for v in self.end)
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "end", e)
        if len(s) != len(e):
            raise ConfigError("segment: endpoint dimensions differ")
        if not all(np.isfinite(v) for v in s + e):
            raise ConfigError("segment: endpoints must be finite")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.end, self.start)))


def boundary_node_indices(grid: Grid) -> np.ndarray:
    """Multi-indices of all boundary nodes, lexicographic, shape (M, dim)."""
    res = grid.resolution
    idx = np.indices(res).reshape(grid.dim, -1).T  # lexicographic (C order)
    on_bnd = np.zeros(len(idx), dtype=bool)
    for k, n in enumerate(res):
        on_bnd |= (idx[:, k] == 0) | (idx[:, k] == n - 1)
    return idx[on_bnd]


def is_corner_node(grid: Grid, multi_idx) -> bool:
    """True when the node lies on more than one face (edge/corner)."""
    hits = 0
    for k, n in enumerate(grid.resolution):
        if multi_idx[k] == 0 or multi_idx[k] == n - 1:
            hits += 1
    return hits > 1


def boundary_outward_normal(grid: Grid, multi_idx) -> np.ndarray:
    """Outward unit normal at a face node.  Raises on edges/corners."""
    normal = np.zeros(grid.dim)
    hits = 0
    for k, n in enumerate(grid.resolution):
        if multi_idx[k] == 0:
            normal[k] = -1.0
            hits += 1
        elif multi_idx[k] == n - 1:
            normal[k] = 1.0
            hits += 1
    if hits != 1:
        raise DomainError(
            f"node {tuple(int(i) for i in multi_idx)} is not on exactly one face"
        )
    return normal
