"""Conductivity phantom catalog and standard illumination sets."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .fields import ScalarField
from .forward import Conductivity, Illumination
from .grids import Grid

__all__ = [
    "make_phantom",
    "make_illuminations",
    "make_2d_cgo_pair",
    "cgo_rho_default",
]


def make_phantom(grid: Grid, kind: str, **params) -> Conductivity:
    """Build a conductivity field by name.

    Kinds: 'constant' (value), 'exp_separable' (rates, one per axis),
    'gaussian_bump' (base, amplitude, center, width), 'periodic'
    (base, amplitude, one full period per axis).
    """
    mesh = grid.mesh()
    if kind == "constant":
        value = float(params.get("value", 1.0))
        vals = np.full(grid.resolution, value)
    elif kind == "exp_separable":
        rates = params.get("rates")
        if rates is None:
            rates = [2.0] + [0.0] * (grid.dim - 1)
        rates = [float(r) for r in rates]
        if len(rates) != grid.dim:
            raise ConfigError("exp_separable: need one rate per axis")
        vals = np.exp(sum(r * m for r, m in zip(rates, mesh)))
    elif kind == "gaussian_bump":
        base = float(params.get("base", 1.0))
        amplitude = float(params.get("amplitude", 1.0))
        width = float(params.get("width", 0.18))
        center = params.get("center")
        if center is None:
            center = 0.5 * (grid.origin + grid.upper)
        center = np.asarray([float(c) for c in center])
        if center.shape != (grid.dim,):
            raise ConfigError("gaussian_bump: center length must match dimension")
        r2 = sum((m - c) ** 2 for m, c in zip(mesh, center))
        vals = base + amplitude * np.exp(-r2 / width**2)
    elif kind == "periodic":
        base = float(params.get("base", 1.0))
        amplitude = float(params.get("amplitude", 0.3))
        lengths = grid.upper - grid.origin
        vals = base + amplitude * np.prod(
            [
                np.sin(2.0 * np.pi * (m - a) / L)
                for m, a, L in zip(mesh, grid.origin, lengths)
            ],
            axis=0,
        )
        if base - abs(amplitude) <= 0:
            raise ConfigError("periodic: base must exceed |amplitude|")
    else:
        raise ConfigError(f"phantom: unknown kind '{kind}'")
    return Conductivity(ScalarField(grid, vals, name=f"sigma[{kind}]"))


def cgo_rho_default(grid: Grid) -> float:
    """Largest integer multiple of pi keeping >= 8 nodes per period."""
    h1 = float(grid.spacing[0])
    return np.pi * max(1, int(np.floor(1.0 / (4.0 * h1))))


def make_illuminations(
    grid: Grid, kind: str, rho: float | None = None, rates=None
):
    """Standard boundary data sets.

    'coordinates': g_i = x_i (dim illuminations).
    'coordinates_tilted': 3D only; x_1, x_2, x_3 and x_3 + x_1/2, a mild
    four-set whose triples (1,2,3) and (1,2,4) stay uniformly oriented.
    'separable': g_i = (1 - e^{-r_i x_i})/r_i (g_i = x_i when r_i = 0),
    the boundary traces of the exact product-form solutions for the
    separable exponential conductivity with the same rates.  Unlike raw
    coordinates these stay smooth on the closed box for that phantom
    (no corner-induced loss of regularity), so stencil-order checks on
    the derived data measure pure discretization error.
    'cgo': 3D only; boundary traces of the four complex-exponential
    solutions at parameter rho (real/imaginary pairs for both axes).
    """
    if kind == "coordinates":
        return [
            Illumination.from_function(
                grid, (lambda k: lambda *x: x[k])(k), name=f"g{k + 1}"
            )
            for k in range(grid.dim)
        ]
    if kind == "coordinates_tilted":
        if grid.dim != 3:
            raise ConfigError("coordinates_tilted illuminations are 3D only")
        fns = [
            lambda x1, x2, x3: x1,
            lambda x1, x2, x3: x2,
            lambda x1, x2, x3: x3,
            lambda x1, x2, x3: x3 + 0.5 * x1,
        ]
        return [
            Illumination.from_function(grid, fn, name=f"g{k + 1}")
            for k, fn in enumerate(fns)
        ]
    if kind == "separable":
        if rates is None:
            rates = [2.0] + [0.0] * (grid.dim - 1)
        rates = [float(r) for r in rates]
        if len(rates) != grid.dim:
            raise ConfigError("separable illuminations: need one rate per axis")

        def _trace(k, r):
            if r == 0.0:
                return lambda *x: x[k]
            return lambda *x: (1.0 - np.exp(-r * x[k])) / r

        return [
            Illumination.from_function(grid, _trace(k, r), name=f"g{k + 1}")
            for k, r in enumerate(rates)
        ]
    if kind == "cgo":
        if grid.dim != 3:
            raise ConfigError("cgo illuminations are 3D only")
        r = cgo_rho_default(grid) if rho is None else float(rho)
        nodes_per_period = 2.0 * np.pi / (r * float(np.min(grid.spacing)))
        if nodes_per_period < 8.0 - 1e-9:
            raise ConfigError(
                f"cgo: rho={r:g} leaves {nodes_per_period:.2f} nodes per "
                "oscillation period; need >= 8 (refine the grid or lower rho)"
            )
        fns = [
            lambda x1, x2, x3: np.exp(r * x2) * np.cos(r * x1),
            lambda x1, x2, x3: np.exp(r * x2) * np.sin(r * x1),
            lambda x1, x2, x3: np.exp(r * x3) * np.cos(r * x1),
            lambda x1, x2, x3: np.exp(r * x3) * np.sin(r * x1),
        ]
        return [
            Illumination.from_function(grid, fn, name=f"g{k + 1}")
            for k, fn in enumerate(fns)
        ]
    raise ConfigError(f"illumination: unknown kind '{kind}'")


def make_2d_cgo_pair(grid: Grid, rho: float = 1.0):
    """2D analogue of the complex-exponential pair (sin leading).

    With sigma = 1 the exact solutions are u1 = e^{rho x2} sin(rho x1)
    and u2 = e^{rho x2} cos(rho x1); ordering keeps det(S1, S2) > 0.
    """
    if grid.dim != 2:
        raise ConfigError("make_2d_cgo_pair is 2D only")
    fns = [
        lambda x1, x2: np.exp(rho * x2) * np.sin(rho * x1),
        lambda x1, x2: np.exp(rho * x2) * np.cos(rho * x1),
    ]
    return [
        Illumination.from_function(grid, fn, name=f"g{k + 1}")
        for k, fn in enumerate(fns)
    ]
