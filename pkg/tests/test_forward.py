import numpy as np
import pytest

from powerdense.errors import ConfigError, SolverError
from powerdense.fields import ScalarField
from powerdense.forward import (
    Conductivity,
    Illumination,
    assemble_system,
    flux_field,
    solve_dirichlet,
)
from powerdense.grids import Grid
from powerdense.phantoms import make_illuminations, make_phantom

from conftest import unit_grid2, unit_grid3


def test_affine_reproduction():
    # sigma = 1, g = x1: affine fields are discretely harmonic -> u = x1
    g = unit_grid2(17)
    cond = make_phantom(g, "constant", value=1.0)
    gs = make_illuminations(g, "coordinates")
    sol = solve_dirichlet(cond, gs[0], tol=1e-12)
    x1 = g.mesh()[0]
    assert np.max(np.abs(sol.u.values - x1)) < 1e-10


def test_exponential_oracle():
    # sigma = e^{x1}, u = e^{-x1} has constant flux sigma u' = -1; the
    # harmonic face average makes the discrete flux constant too
    # (2(e^{x_i}-e^{x_{i+1}})/(e^{x_i}+e^{x_{i+1}}) = -2 tanh(h/2) at every
    # face), so the solver reproduces this solution to its own tolerance.
    for n in (17, 33):
        g = Grid(extents=((0.0, 1.0), (0.0, 1.0)), resolution=(n, n))
        x1 = g.mesh()[0]
        cond = Conductivity(ScalarField(g, np.exp(x1), name="sigma"))
        ill = Illumination.from_function(g, lambda a, b: np.exp(-a), name="g")
        sol = solve_dirichlet(cond, ill, tol=1e-12)
        assert np.max(np.abs(sol.u.values - np.exp(-x1))) < 5e-9


def test_bump_self_oracle_second_order():
    # genuinely 2D-varying sigma: coarse solves against a fine reference
    cond_of = lambda g: make_phantom(g, "gaussian_bump", base=1.0, amplitude=0.5)
    ref_grid = unit_grid2(257)
    ref = solve_dirichlet(
        cond_of(ref_grid), make_illuminations(ref_grid, "coordinates")[0], tol=1e-11
    )
    errs = []
    for n, stride in ((33, 8), (65, 4)):
        g = unit_grid2(n)
        sol = solve_dirichlet(
            cond_of(g), make_illuminations(g, "coordinates")[0], tol=1e-11
        )
        restricted = ref.u.values[::stride, ::stride]
        errs.append(float(np.max(np.abs(sol.u.values - restricted))))
    order = np.log2(errs[0] / errs[1])
    assert order >= 1.7


def test_maximum_principle():
    g = unit_grid2(33)
    cond = make_phantom(g, "gaussian_bump", base=1.0, amplitude=2.0)
    ill = Illumination.from_function(
        g, lambda a, b: a + 0.3 * np.sin(np.pi * b), name="g"
    )
    sol = solve_dirichlet(cond, ill, tol=1e-10)
    lo, hi = ill.range()
    assert sol.value_range[0] >= lo - 1e-10
    assert sol.value_range[1] <= hi + 1e-10


def test_flux_conservation_per_cell():
    # net flux imbalance per cell (h^2-scaled stencil residual) within 10 tol
    g = unit_grid2(33)
    cond = make_phantom(g, "gaussian_bump", base=1.0, amplitude=1.0)
    ill = make_illuminations(g, "coordinates")[0]
    tol = 1e-10
    sol = solve_dirichlet(cond, ill, tol=tol)
    a_mat, b, ids = assemble_system(cond, ill)
    x = sol.u.values[ids >= 0][np.argsort(ids[ids >= 0])]
    imbalance = float(np.max(np.abs(a_mat @ x - b))) * float(g.spacing[0]) ** 2
    flux = flux_field(cond, sol.u)
    scale = float(
        np.max(np.abs(np.sqrt(cond.sigma.values)[..., None] * flux.values))
    )
    assert imbalance <= 10.0 * tol * scale


def test_three_dimensional_affine():
    g = unit_grid3(9)
    cond = make_phantom(g, "constant", value=4.0)
    gs = make_illuminations(g, "coordinates")
    sol = solve_dirichlet(cond, gs[2], tol=1e-12)
    x3 = g.mesh()[2]
    assert np.max(np.abs(sol.u.values - x3)) < 1e-10
    s = flux_field(cond, sol.u)
    assert np.allclose(s.values[..., 2], 2.0, atol=1e-9)
    assert np.max(np.abs(s.values[..., :2])) < 1e-9


def test_solver_error_on_iteration_cap():
    g = unit_grid2(33)
    cond = make_phantom(g, "gaussian_bump", base=1.0, amplitude=1.0)
    ill = make_illuminations(g, "coordinates")[0]
    with pytest.raises(SolverError) as err:
        solve_dirichlet(cond, ill, tol=1e-13, maxiter=3)
    assert err.value.iterations <= 3
    assert err.value.residual > 1e-12


def test_conductivity_positivity_enforced():
    g = unit_grid2(5)
    vals = np.ones(g.resolution)
    vals[2, 2] = -0.5
    with pytest.raises((ConfigError, ValueError, Exception)):
        Conductivity(ScalarField(g, vals, name="sigma"))


def test_illumination_csv_round_trip(tmp_path):
    g = unit_grid2(9)
    ill = Illumination.from_function(g, lambda a, b: a + 2 * b, name="g1")
    path = tmp_path / "g1.csv"
    ill.save_csv(path)
    back = Illumination.load_csv(path, g, name="g1")
    assert np.allclose(back.values, ill.values, rtol=0, atol=0)


def test_grid_mismatch_rejected():
    cond = make_phantom(unit_grid2(9), "constant")
    ill = make_illuminations(unit_grid2(17), "coordinates")[0]
    with pytest.raises(ConfigError):
        solve_dirichlet(cond, ill)
