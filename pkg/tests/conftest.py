"""Shared helpers for the powerdense test suite."""

from __future__ import annotations

import numpy as np
import pytest

from powerdense.acquisition import synthesize_H
from powerdense.forward import flux_field, solve_dirichlet
from powerdense.grids import Grid
from powerdense.phantoms import make_illuminations, make_phantom


def unit_grid2(n: int) -> Grid:
    return Grid(extents=((0.0, 1.0), (0.0, 1.0)), resolution=(n, n))


def unit_grid3(n: int) -> Grid:
    return Grid(extents=((0.0, 1.0),) * 3, resolution=(n, n, n))


def solve_fluxes(cond, illuminations, tol: float = 1e-10):
    """Solve every illumination and return (solutions, fluxes)."""
    sols = [solve_dirichlet(cond, g, tol=tol) for g in illuminations]
    fluxes = [flux_field(cond, s.u) for s in sols]
    return sols, fluxes


def pipeline_data(grid, phantom_kind="gaussian_bump", illum_kind=None, rho=None,
                  tol=1e-10, **phantom_params):
    """Phantom -> solves -> power densities, returning all intermediates."""
    cond = make_phantom(grid, phantom_kind, **phantom_params)
    if illum_kind is None:
        illum_kind = "coordinates" if grid.dim == 2 else "coordinates_tilted"
    gs = make_illuminations(grid, illum_kind, rho=rho,
                            rates=phantom_params.get("rates"))
    sols, fluxes = solve_fluxes(cond, gs, tol=tol)
    data = synthesize_H(fluxes, rho=rho)
    return cond, gs, sols, fluxes, data


def random_spd(rng, n: int, batch=()):
    """Well-conditioned random SPD matrices."""
    a = rng.standard_normal(batch + (n, n))
    return np.einsum("...ij,...kj->...ik", a, a) + 0.5 * np.eye(n)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
