"""Dirichlet problems for div(sigma grad u) = 0 on rectangular grids.

Discretization: conservative 5-point (2D) / 7-point (3D) stencil with
harmonic averaging of sigma on cell faces; boundary values eliminated
into the right-hand side.  The resulting SPD system is solved with
Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConfigError, SolverError
from .fields import ScalarField, VectorField
from .grids import Grid, boundary_node_indices
from .operators import gradient

__all__ = [
    "Conductivity",
    "Illumination",
    "Solution",
    "solve_dirichlet",
    "flux_field",
]


@dataclass
class Conductivity:
    """Strictly positive scalar conductivity with recorded bounds."""

    sigma: ScalarField

    def __post_init__(self):
        lo = float(np.min(self.sigma.values))
        if lo <= 0.0:
            raise ConfigError(f"conductivity: min value {lo:g} is not positive")

    @property
    def grid(self) -> Grid:
        return self.sigma.grid

    @property
    def bounds(self) -> tuple[float, float]:
        return float(np.min(self.sigma.values)), float(np.max(self.sigma.values))

    def log_gradient_half(self) -> VectorField:
        """The field grad(log sigma) / 2."""
        g = gradient(ScalarField(self.grid, np.log(self.sigma.values)))
        return VectorField(self.grid, 0.5 * g.values, name="half_log_grad")


@dataclass
class Illumination:
    """Dirichlet boundary data, stored in boundary-node order.

    Values align with :func:`powerdense.grids.boundary_node_indices`
    (lexicographic multi-index order).
    """

    grid: Grid
    values: np.ndarray
    name: str = "g"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        want = len(boundary_node_indices(self.grid))
        if self.values.shape != (want,):
            raise ConfigError(
                f"illumination '{self.name}': {self.values.size} values for "
                f"{want} boundary nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigError(f"illumination '{self.name}': non-finite values")

    @classmethod
    def from_function(cls, grid: Grid, fn, name: str = "g") -> "Illumination":
        idx = boundary_node_indices(grid)
        coords = grid.origin + idx * grid.spacing
        vals = np.asarray(fn(*coords.T), dtype=float) * np.ones(len(idx))
        return cls(grid, vals, name=name)

    def scatter(self) -> np.ndarray:
        """Full-grid array with boundary values set and zeros inside."""
        full = np.zeros(self.grid.resolution)
        idx = boundary_node_indices(self.grid)
        full[tuple(idx.T)] = self.values
        return full

    def range(self) -> tuple[float, float]:
        return float(np.min(self.values)), float(np.max(self.values))

    def save_csv(self, path) -> None:
        idx = boundary_node_indices(self.grid)
        with open(path, "w", encoding="ascii") as fh:
            fh.write("# boundary illumination: node multi-index, value\n")
            for row, v in zip(idx, self.values):
                fh.write(",".join(str(int(i)) for i in row) + "," + repr(float(v)) + "\n")

    @classmethod
    def load_csv(cls, path, grid: Grid, name: str = "g") -> "Illumination":
        rows = []
        with open(path, encoding="ascii") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                rows.append(line.split(","))
        idx = boundary_node_indices(grid)
        if len(rows) != len(idx):
            raise ConfigError(
                f"{path}: {len(rows)} rows for {len(idx)} boundary nodes"
            )
        vals = np.empty(len(idx))
        lookup = {tuple(r): i for i, r in enumerate(map(tuple, idx.tolist()))}
        for parts in rows:
            key = tuple(int(p) for p in parts[:-1])
            if key not in lookup:
                raise ConfigError(f"{path}: {key} is not a boundary node")
            vals[lookup[key]] = float(parts[-1])
        return cls(grid, vals, name=name)


@dataclass
class Solution:
    """Solved potential plus convergence diagnostics."""

    u: ScalarField
    iterations: int
    residual: float
    value_range: tuple[float, float] = field(default=(np.nan, np.nan))


def _face_sigma(sig: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(sig, axis, 0)
    face = 2.0 * a[:-1] * a[1:] / (a[:-1] + a[1:])
    return np.moveaxis(face, 0, axis)


def assemble_system(c: Conductivity, g: Illumination):
    """Interior-node SPD system (A, b) for the Dirichlet problem."""
    grid = c.grid
    if g.grid != grid:
        raise ConfigError("solve: illumination grid differs from conductivity grid")
    res = grid.resolution
    h = grid.spacing
    sig = c.sigma.values
    full_g = g.scatter()

    inner = tuple(slice(1, n - 1) for n in res)
    ishape = tuple(n - 2 for n in res)
    n_unknown = int(np.prod(ishape))
    ids = -np.ones(res, dtype=np.int64)
    ids[inner] = np.arange(n_unknown).reshape(ishape)

    diag = np.zeros(ishape)
    rows, cols, vals = [], [], []
    b = np.zeros(ishape)

    for axis in range(grid.dim):
        face = _face_sigma(sig, axis) / h[axis] ** 2  # shape: res - e_axis
        for side in (0, 1):  # 0: neighbor at -e_axis, 1: at +e_axis

            def shifted(arr, s):
                sl = [slice(1, n - 1) for n in res]
                sl[axis] = slice(1 + s, res[axis] - 1 + s)
                return arr[tuple(sl)]

            # face between node i and i-1 is face[..., i-1, ...]
            fsl = [slice(1, n - 1) for n in res]
            fsl[axis] = slice(0, res[axis] - 2) if side == 0 else slice(1, res[axis] - 1)
            coeff = face[tuple(fsl)]
            diag += coeff
            nb_ids = shifted(ids, -1 if side == 0 else 1)
            nb_g = shifted(full_g, -1 if side == 0 else 1)
            interiormask = nb_ids >= 0
            rows.append(ids[inner][interiormask])
            cols.append(nb_ids[interiormask])
            vals.append(-coeff[interiormask])
            b += np.where(interiormask, 0.0, coeff * nb_g)

    rows.append(np.arange(n_unknown))
    cols.append(np.arange(n_unknown))
    vals.append(diag.ravel())
    a_mat = sp.csr_matrix(
        (
            np.concatenate(vals),
            (np.concatenate(rows).ravel(), np.concatenate(cols).ravel()),
        ),
        shape=(n_unknown, n_unknown),
    )
    return a_mat, b.ravel(), ids


def solve_dirichlet(
    c: Conductivity, g: Illumination, tol: float = 1e-10, maxiter: int | None = None
) -> Solution:
    """Solve the Dirichlet problem; relative residual <= tol or SolverError."""
    grid = c.grid
    a_mat, b, ids = assemble_system(c, g)
    n = a_mat.shape[0]
    if maxiter is None:
        maxiter = 50 * max(grid.resolution)
    inv_diag = 1.0 / a_mat.diagonal()
    precond = LinearOperator((n, n), matvec=lambda x: inv_diag * x)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = cg(a_mat, b, rtol=tol, atol=0.0, maxiter=maxiter, M=precond, callback=count)
    bnorm = float(np.linalg.norm(b))
    resid = float(np.linalg.norm(b - a_mat @ x)) / (bnorm if bnorm > 0 else 1.0)
    if info != 0 or not np.isfinite(resid) or resid > tol * 10.0:
        raise SolverError(
            f"conjugate gradients failed (info={info}, rel residual={resid:.3e}, "
            f"iterations={iters})",
            residual=resid,
            iterations=iters,
        )

    full = g.scatter()
    full[ids >= 0] = x[ids[ids >= 0]]
    u = ScalarField(grid, full, name=f"u[{g.name}]")
    return Solution(
        u=u,
        iterations=iters,
        residual=resid,
        value_range=(float(full.min()), float(full.max())),
    )


def flux_field(c: Conductivity, u: ScalarField) -> VectorField:
    """The rescaled flux sqrt(sigma) * grad(u)."""
    if u.grid != c.grid:
        raise ConfigError("flux: potential grid differs from conductivity grid")
    grad_u = gradient(u)
    vals = np.sqrt(c.sigma.values)[..., None] * grad_u.values
    return VectorField(c.grid, vals, name=f"S[{u.name}]")
