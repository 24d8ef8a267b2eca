import numpy as np
import pytest

from powerdense.acquisition import PowerDensityData, synthesize_H
from powerdense.algebra import gram_schmidt_T
from powerdense.errors import (
    ConfigError,
    CoveringError,
    DataFormatError,
    NumericalError,
)
from powerdense.fields import MatrixField
from powerdense.operators import sample
from powerdense.recon3d import (
    Covering,
    Slab,
    _signed_block,
    anchor_frame_from_fluxes,
    build_covering,
    cgo_exact_fluxes,
    covering_from_data,
    global_reconstruct_3d,
    integrate_frame_segment,
    load_covering,
    nearest_rotations,
    ode_coefficients,
    plan_chain,
    save_covering,
    transfer_R,
    triple_determinant,
)

from conftest import random_spd, unit_grid3


@pytest.fixture(scope="module")
def exact_cgo():
    grid = unit_grid3(25)
    rho = np.pi
    fluxes = cgo_exact_fluxes(grid, rho)
    covering = build_covering(fluxes, rho, grid)
    data = synthesize_H(fluxes, rho=rho)
    return grid, rho, fluxes, covering, data


def test_covering_structure(exact_cgo):
    grid, rho, fluxes, covering, data = exact_cgo
    assert len(covering.slabs) == 3
    lo_hi = [(s.lo, s.hi) for s in covering.slabs]
    assert np.allclose(lo_hi[0], (0.0,  1.0 / 3.0))
    assert np.allclose(lo_hi[1], (1.0 / 6.0, 5.0 / 6.0))
    assert np.allclose(lo_hi[2], (2.0 / 3.0, 1.0))
    assert [s.sign for s in covering.slabs] == [-1, -1, 1]
    assert covering.slabs[0].triple == (0, 1, 2)  # cos family
    assert covering.slabs[1].triple == (0, 1, 3)  # sin family
    assert covering.slabs[2].triple == (0, 1, 2)
    # analytic fluxes: the covering clears the quarter-margin target
    gamma0 = covering.diagnostics["gamma0"]
    assert np.isclose(gamma0, rho**3)  # min(2 x2 + x3) = 0 on the unit box
    assert covering.c0 >= 0.25 * gamma0 - 1e-9
    for s in covering.slabs:
        assert s.min_det >= covering.c0 - 1e-9
    assert covering.diagnostics["sup_f1"] < 1e-10
    assert covering.diagnostics["sup_f2"] < 1e-10
    # signed determinants really are positive on their slabs
    x1 = grid.mesh()[0]
    for s in covering.slabs:
        det = triple_determinant(fluxes, s.triple, s.sign)
        assert np.min(det[s.contains(x1)]) > 0
    assert covering.deepest(0.05) == 0
    assert covering.deepest(0.5) == 1
    with pytest.raises(CoveringError):
        covering.deepest(1.5)


def test_covering_from_data_agrees(exact_cgo):
    grid, rho, fluxes, covering, data = exact_cgo
    from_data = covering_from_data(data)
    assert len(from_data.slabs) == len(covering.slabs)
    for a, b in zip(from_data.slabs, covering.slabs):
        assert a.triple == b.triple and a.sign == b.sign
        assert abs(a.lo - b.lo) <= grid.spacing[0] + 1e-12
        assert abs(a.hi - b.hi) <= grid.spacing[0] + 1e-12
    no_rho = PowerDensityData(matrix=data.matrix)
    with pytest.raises(ConfigError):
        covering_from_data(no_rho)


def test_plan_chain_waypoints(exact_cgo):
    _, _, _, covering, _ = exact_cgo
    plan = plan_chain(covering, 0.1, 0.95)
    assert plan.chain == (0, 1, 2)
    assert 1.0 / 6.0 <= plan.planes[0] <= 1.0 / 3.0
    assert 2.0 / 3.0 <= plan.planes[1] <= 5.0 / 6.0
    assert plan.planes[0] < plan.planes[1]
    back = plan_chain(covering, 0.95, 0.1)
    assert back.chain == (2, 1, 0)
    assert back.planes[0] > back.planes[1]
    stay = plan_chain(covering, 0.5, 0.6)
    assert stay.chain == (1,) and stay.planes == ()
    with pytest.raises(ConfigError):
        plan_chain(covering, 0.1, 0.9, waypoint_fraction=1.5)
    gappy = Covering(
        slabs=[Slab(0.0, 0.4, (0, 1, 2), 1), Slab(0.6, 1.0, (0, 1, 2), 1)],
        c0=0.0,
    )
    with pytest.raises(CoveringError):
        plan_chain(gappy, 0.1, 0.9)


def test_transfer_identity_and_guard(rng):
    h = random_spd(np.random.default_rng(5), 3)
    t = gram_schmidt_T(h)
    q, _ = np.linalg.qr(np.random.default_rng(6).standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    # identical triples: T H T^T = I, the frame passes through unchanged
    r_out, dist = transfer_R(q, t, h, t)
    assert np.max(np.abs(r_out - q)) < 1e-12
    assert dist < 1e-12
    with pytest.raises(NumericalError):
        transfer_R(q, t, 3.0 * h, t)  # inconsistent cross data


def test_transfer_matches_next_local_frame_at_node(exact_cgo):
    # At a grid node the Gramian is sampled exactly, so re-expressing the
    # frame of one slab in the next slab's triple must land on the next
    # triple's own local frame to solver accuracy.
    grid, rho, fluxes, covering, data = exact_cgo
    point = np.array([5.0 / 24.0, 0.5, 0.5])  # node-aligned, overlap 0/1
    sp, sn = covering.slabs[0], covering.slabs[1]
    h_at = sample(data.matrix, point)
    frames = []
    for slab in (sp, sn):
        t = gram_schmidt_T(_signed_block(h_at, slab))
        s_cols = np.stack(
            [sample(fluxes[a], point) for a in slab.triple], axis=-1
        ) * slab.signs
        rot, dist = nearest_rotations((s_cols @ t.T)[None])
        assert float(dist[0]) < 1e-8
        frames.append((rot[0], t))
    (r_prev, t_prev), (r_next, _) = frames
    t_next = frames[1][1]
    cross = (
        h_at[np.ix_(sp.triple, sn.triple)]
        * np.asarray(sp.signs)[:, None]
        * np.asarray(sn.signs)[None, :]
    )
    r_out, dist = transfer_R(r_prev, t_prev, cross, t_next)
    assert dist < 1e-8
    assert np.max(np.abs(r_out - r_next)) < 1e-8


def test_segment_transport_separable_oracle():
    # sigma = e^{2 x3}: diagonal data, R stays the identity, and
    # log sigma grows by exactly 2 * (x3_end - x3_start)
    grid = unit_grid3(21)
    x1, x2, x3 = grid.mesh()
    h = np.zeros(grid.resolution + (3, 3))
    h[..., 0, 0] = np.exp(2 * x3)
    h[..., 1, 1] = np.exp(2 * x3)
    h[..., 2, 2] = np.exp(-2 * x3)
    data = PowerDensityData(matrix=MatrixField(grid, h, symmetric=True, name="H"))
    slab = Slab(0.0, 1.0, (0, 1, 2), 1)
    coeffs = ode_coefficients(data, slab)
    start, end = (0.3, 0.4, 0.2), (0.7, 0.6, 0.8)
    r_end, ls_end, diag = integrate_frame_segment(
        coeffs, start, end, np.eye(3), 0.4
    )
    assert np.max(np.abs(r_end - np.eye(3))) < 1e-6
    # The log-conductivity integrand is built from centrally differenced
    # connection fields, so it carries an h^2/6 relative bias (cosh-type
    # factor for exponential conductivity); at h = 1/20 over a 0.6-long
    # x3 leg that is ~3e-4.  The time integration itself is far tighter.
    assert abs(ls_end - (0.4 + 2.0 * (0.8 - 0.2))) < 1e-3
    assert diag["max_drift"] < 1e-9
    assert np.isfinite(diag["min_logd"])
    assert diag["steps"] >= 1


def test_anchor_frame(exact_cgo):
    grid, rho, fluxes, covering, data = exact_cgo
    frame, slab_idx, dist = anchor_frame_from_fluxes(
        fluxes, data, covering, (0.5, 0.5, 0.5)
    )
    assert slab_idx == 1
    assert np.max(np.abs(frame.T @ frame - np.eye(3))) < 1e-10
    assert np.linalg.det(frame) > 0
    assert dist < 1e-8


def test_covering_file_round_trip(tmp_path, exact_cgo):
    _, _, _, covering, _ = exact_cgo
    path = tmp_path / "covering.txt"
    save_covering(covering, path)
    back = load_covering(path)
    assert len(back.slabs) == len(covering.slabs)
    for a, b in zip(back.slabs, covering.slabs):
        assert a.lo == b.lo and a.hi == b.hi  # repr round trip is exact
        assert a.triple == b.triple and a.sign == b.sign
    bad = tmp_path / "bad.txt"
    bad.write_text("slab 0.0 0.5 1 2\n")
    with pytest.raises(DataFormatError):
        load_covering(bad)
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    with pytest.raises(DataFormatError):
        load_covering(empty)


def test_global_reconstruction_constant(exact_cgo):
    grid, rho, fluxes, covering, data = exact_cgo
    frame, _, _ = anchor_frame_from_fluxes(fluxes, data, covering, (0.5, 0.5, 0.5))
    res = global_reconstruct_3d(data, covering, (0.5, 0.5, 0.5), 0.0, frame)
    assert bool(np.all(res.mask))
    assert res.diagnostics["fraction_reconstructed"] == 1.0
    # Even with unit conductivity the frame and connection fields oscillate
    # at wavenumber 2*rho, and the transport kernel samples them trilinearly
    # along the paths, so the recovered log-conductivity is interpolation
    # limited at O((rho*h)^2) ~ 3e-2 on a 25^3 grid (quarters on refinement).
    assert np.max(np.abs(res.log_sigma.values)) < 5e-2
    assert res.diagnostics["max_drift"] < 1e-6
    assert res.diagnostics["max_chain_length"] <= 3
    assert res.per_node["chain_length"].max() <= 3
    # Waypoint transfers re-project to the nearest rotation; the projection
    # distance is interpolation-level (not integrator-level) and must be
    # recorded rather than tripping the per-step drift limit.
    assert res.diagnostics["max_projection"] < 1e-6
    assert 0.0 < res.diagnostics["max_transfer_projection"] < 5e-2
    assert res.per_node["transfer_projection"].max() < 5e-2
    with pytest.raises(ConfigError):
        global_reconstruct_3d(
            data, covering, (0.5, 0.5, 0.5), 0.0, 2.0 * np.eye(3)
        )
