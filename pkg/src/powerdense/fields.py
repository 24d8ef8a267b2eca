"""Scalar, vector, and matrix fields on grids, with file round-tripping.

File format: a short text header (kind, dim, extents, resolution,
components, encoding) followed by node values in x-fastest order (the
axis-0 index varies fastest).  Values are either ASCII CSV lines, one
node per line, or raw little-endian float64, selected by the header's
``encoding`` entry.  Matrix components are stored row-major per node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError
from .grids import Grid

__all__ = [
    "ScalarField",
    "VectorField",
    "MatrixField",
    "read_field",
    "write_field",
]

_MAGIC = "powerdense-field 1"


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ConfigError(f"{what}: non-finite values")


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray
    name: str = "scalar"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.shape != self.grid.resolution:
            raise ConfigError(
                f"scalar field '{self.name}': shape {self.values.shape} does not "
                f"match grid {self.grid.resolution}"
            )
        _check_finite(self.values, f"scalar field '{self.name}'")

    @classmethod
    def from_function(cls, grid: Grid, fn, name: str = "scalar") -> "ScalarField":
        return cls(grid, fn(*grid.mesh()) * np.ones(grid.resolution), name=name)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class VectorField:
    grid: Grid
    values: np.ndarray  # shape resolution + (dim,)
    name: str = "vector"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        want = self.grid.resolution + (self.grid.dim,)
        if self.values.shape != want:
            raise ConfigError(
                f"vector field '{self.name}': shape {self.values.shape}, want {want}"
            )
        _check_finite(self.values, f"vector field '{self.name}'")

    def component(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[..., k], name=f"{self.name}[{k}]")

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class MatrixField:
    """Square-matrix-valued field; ``symmetric`` asserts exact symmetry."""

    grid: Grid
    values: np.ndarray  # shape resolution + (m, m)
    symmetric: bool = False
    name: str = "matrix"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if (
            self.values.ndim != self.grid.dim + 2
            or self.values.shape[: self.grid.dim] != self.grid.resolution
            or self.values.shape[-1] != self.values.shape[-2]
        ):
            raise ConfigError(
                f"matrix field '{self.name}': bad shape {self.values.shape}"
            )
        _check_finite(self.values, f"matrix field '{self.name}'")
        if self.symmetric:
            gap = np.max(np.abs(self.values - np.swapaxes(self.values, -1, -2)))
            if gap != 0.0:
                raise ConfigError(
                    f"matrix field '{self.name}': symmetric flag set but "
                    f"max asymmetry is {gap:g}"
                )

    @property
    def block_size(self) -> int:
        return self.values.shape[-1]

    def entry(self, i: int, j: int) -> ScalarField:
        return ScalarField(self.grid, self.values[..., i, j], name=f"{self.name}[{i},{j}]")

    def det(self) -> np.ndarray:
        return np.linalg.det(self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _num_components(f) -> int:
    if isinstance(f, ScalarField):
        return 1
    if isinstance(f, VectorField):
        return f.grid.dim
    return f.block_size ** 2


def _flat_nodes(f) -> np.ndarray:
    """Values as (num_nodes, components), node index x-fastest."""
    ncomp = _num_components(f)
    v = f.values.reshape(f.grid.resolution + (ncomp,))
    return v.reshape((f.grid.num_nodes, ncomp), order="F")


def write_field(path, f, encoding: str = "ascii") -> None:
    """Write a field to ``path``; encoding 'ascii' or 'binary'."""
    if encoding not in ("ascii", "binary"):
        raise ConfigError(f"write_field: unknown encoding '{encoding}'")
    kind = {ScalarField: "scalar", VectorField: "vector", MatrixField: "matrix"}[
        type(f)
    ]
    g = f.grid
    lines = [
        _MAGIC,
        f"kind: {kind}",
        f"dim: {g.dim}",
        "extents: " + " ".join(repr(v) for ab in g.extents for v in ab),
        "resolution: " + " ".join(str(n) for n in g.resolution),
        f"components: {_num_components(f)}",
    ]
    if kind == "matrix":
        lines.append(f"symmetric: {1 if f.symmetric else 0}")
    lines.append(f"encoding: {encoding}")
    lines.append("data:")
    header = "\n".join(lines) + "\n"
    flat = _flat_nodes(f)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if encoding == "ascii":
            body = "\n".join(",".join(repr(float(v)) for v in row) for row in flat)
            fh.write(body.encode("ascii"))
            fh.write(b"\n")
        else:
            fh.write(np.ascontiguousarray(flat, dtype="<f8").tobytes())


def read_field(path):
    """Read a field written by :func:`write_field`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0 or blob[:nl].decode("ascii", "replace") != _MAGIC:
        raise DataFormatError(f"{path}: not a field file (bad magic)")
    header: dict[str, str] = {}
    pos = nl + 1
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise DataFormatError(f"{path}: truncated header")
        line = blob[pos:nl].decode("ascii")
        pos = nl + 1
        if line == "data:":
            break
        if ":" not in line:
            raise DataFormatError(f"{path}: malformed header line '{line}'")
        key, _, val = line.partition(":")
        header[key.strip()] = val.strip()
    try:
        kind = header["kind"]
        dim = int(header["dim"])
        ext_vals = [float(v) for v in header["extents"].split()]
        res = tuple(int(v) for v in header["resolution"].split())
        ncomp = int(header["components"])
        encoding = header["encoding"]
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad header ({exc})") from exc
    if len(ext_vals) != 2 * dim or len(res) != dim:
        raise DataFormatError(f"{path}: header extents/resolution inconsistent")
    grid = Grid(
        tuple((ext_vals[2 * k], ext_vals[2 * k + 1]) for k in range(dim)), res
    )
    n_nodes = grid.num_nodes
    if encoding == "ascii":
        try:
            tokens = blob[pos:].decode("ascii").replace("\n", ",").split(",")
            flat = np.array([float(t) for t in tokens if t.strip()], dtype=float)
        except ValueError as exc:
            raise DataFormatError(f"{path}: bad ASCII data ({exc})") from exc
    elif encoding == "binary":
        flat = np.frombuffer(blob[pos:], dtype="<f8").astype(float)
    else:
        raise DataFormatError(f"{path}: unknown encoding '{encoding}'")
    if flat.size != n_nodes * ncomp:
        raise DataFormatError(
            f"{path}: expected {n_nodes * ncomp} values, found {flat.size}"
        )
    values = flat.reshape((n_nodes, ncomp)).reshape(
        grid.resolution + (ncomp,), order="F"
    )
    name = str(path)
    if kind == "scalar":
        if ncomp != 1:
            raise DataFormatError(f"{path}: scalar field with {ncomp} components")
        return ScalarField(grid, values[..., 0], name=name)
    if kind == "vector":
        if ncomp != dim:
            raise DataFormatError(f"{path}: vector field with {ncomp} components")
        return VectorField(grid, values, name=name)
    if kind == "matrix":
        m = int(round(ncomp ** 0.5))
        if m * m != ncomp:
            raise DataFormatError(f"{path}: matrix field with {ncomp} components")
        sym = header.get("symmetric", "0") == "1"
        return MatrixField(
            grid, values.reshape(grid.resolution + (m, m)), symmetric=sym, name=name
        )
    raise DataFormatError(f"{path}: unknown field kind '{kind}'")
