import numpy as np
import pytest

from powerdense.errors import ConfigError, DomainError
from powerdense.grids import (
    Grid,
    boundary_node_indices,
    boundary_outward_normal,
    is_corner_node,
)

from conftest import unit_grid2, unit_grid3


def test_construction_validation():
    with pytest.raises(ConfigError):
        Grid(extents=((0.0, 1.0),), resolution=(5,))  # 1D unsupported
    with pytest.raises(ConfigError):
        Grid(extents=((0.0, 1.0), (0.0, 1.0)), resolution=(5,))  # length mismatch
    with pytest.raises(ConfigError):
        Grid(extents=((0.0, 1.0), (1.0, 0.0)), resolution=(5, 5))  # inverted extent
    with pytest.raises(ConfigError):
        Grid(extents=((0.0, 1.0), (0.0, 1.0)), resolution=(5, 2))  # too few nodes


def test_geometry_accessors():
    g = Grid(extents=((0.0, 2.0), (-1.0, 1.0)), resolution=(5, 9))
    assert g.dim == 2
    assert np.allclose(g.spacing, [0.5, 0.25])
    assert np.allclose(g.origin, [0.0, -1.0])
    assert np.allclose(g.upper, [2.0, 1.0])
    assert g.num_nodes == 45
    axes = g.axes()
    assert axes[0][0] == 0.0 and axes[0][-1] == 2.0 and len(axes[0]) == 5
    coords = g.node_coordinates()
    assert coords.shape == (45, 2)
    # x-fastest flattening: the first axis varies fastest
    assert np.allclose(coords[1] - coords[0], [0.5, 0.0])


def test_refined_keeps_box():
    g = unit_grid2(9)
    r = g.refined(2)
    assert r.resolution == (17, 17)
    assert r.extents == g.extents
    # refined nodes contain the coarse nodes exactly
    assert np.allclose(r.axes()[0][::2], g.axes()[0])


def test_header_round_trip():
    g = Grid(extents=((0.0, 1.0), (0.25, 0.75), (0.0, 2.0)), resolution=(5, 7, 9))
    assert Grid.from_header_dict(g.header_dict()) == g
    assert g.hash_str() == Grid.from_header_dict(g.header_dict()).hash_str()
    assert g.hash_str() != unit_grid2(9).hash_str()


def test_axis_slab():
    g = unit_grid3(11)
    sub, (i0, i1) = g.axis_slab(0.18, 0.52, axis=0)
    # node planes at multiples of 0.1; the slab bounds [0.18, 0.52] outward
    assert (i0, i1) == (1, 6)
    assert sub.resolution == (6, 11, 11)
    assert np.isclose(sub.extents[0][0], 0.1) and np.isclose(sub.extents[0][1], 0.6)
    with pytest.raises(ConfigError):
        g.axis_slab(1.2, 1.3, axis=0)  # entirely past the upper face


def test_require_inside():
    g = unit_grid2(5)
    g.require_inside(np.array([[0.5, 0.5], [0.0, 1.0]]), what="probe")
    with pytest.raises(DomainError):
        g.require_inside(np.array([[1.5, 0.5]]), what="probe")


def test_boundary_bookkeeping():
    g = unit_grid2(5)
    idx = boundary_node_indices(g)
    assert len(idx) == 5 * 5 - 3 * 3
    assert is_corner_node(g, (0, 0)) and not is_corner_node(g, (0, 2))
    n = boundary_outward_normal(g, (0, 2))
    assert np.allclose(n, [-1.0, 0.0])
    n = boundary_outward_normal(g, (2, 4))
    assert np.allclose(n, [0.0, 1.0])
