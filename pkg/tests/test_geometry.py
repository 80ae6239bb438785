import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wheelgen.geometry import (build_surface_loads, build_wheel_domain, default_radii,
                               volume_fraction_of)
from wheelgen.synthetic import SyntheticWheelSpec, render_wheel


def classify_by_loop(n, outer, rim, hub):
    """Independent per-pixel classifier: 0 void, 1 solid, 2 design."""
    out = np.empty((n, n), int)
    for ey in range(n):
        for ex in range(n):
            r = math.hypot(ex + 0.5 - n / 2, ey + 0.5 - n / 2)
            if r > outer or r < hub:
                out[ey, ex] = 0
            elif r > outer - rim:
                out[ey, ex] = 1
            else:
                out[ey, ex] = 2
    return out


def test_full_resolution_grid_has_void_outer_ring():
    d = build_wheel_domain(128)
    assert d.shape == (128, 128)
    assert d.n_elements == 128 * 128
    border = np.concatenate([d.passive_void[0], d.passive_void[-1], d.passive_void[:, 0], d.passive_void[:, -1]])
    assert border.all()
    assert d.passive_solid.any() and d.design_mask.any()


def test_small_domain_partitions_all_elements():
    d = build_wheel_domain(16, outer_radius=7, rim_thickness=1, hub_radius=2)
    total = d.passive_void.astype(int) + d.passive_solid + d.design_mask
    assert total.shape == (16, 16)
    assert np.all(total == 1)
    assert total.sum() == 256


def test_class_counts_match_pixel_loop():
    d = build_wheel_domain(64, outer_radius=31, rim_thickness=3, hub_radius=8)
    ref = classify_by_loop(64, 31, 3, 8)
    assert d.passive_void.sum() == np.sum(ref == 0)
    assert d.passive_solid.sum() == np.sum(ref == 1)
    assert d.design_mask.sum() == np.sum(ref == 2)
    assert np.array_equal(d.design_mask, ref == 2)


def test_fixed_and_loaded_nodes_sit_on_the_circles():
    d = build_wheel_domain(48)
    outer, rim, hub = default_radii(48)
    cx, cy = d.center
    fixed = np.unique(d.fixed_dofs // 2)
    for nodes, radius, slack in ((fixed, hub, 1.5), (d.loaded_nodes, outer, 1.5)):
        ix, iy = np.divmod(nodes, d.nely + 1)
        r = np.hypot(ix - cx, iy - cy)
        assert np.all(np.abs(r - radius) <= slack)
    assert np.array_equal(d.fixed_dofs[::2] // 2, d.fixed_dofs[1::2] // 2)


def test_domain_arrays_are_read_only():
    d = build_wheel_domain(16)
    with pytest.raises(ValueError):
        d.design_mask[0, 0] = True


@pytest.mark.parametrize("kwargs", [dict(resolution=4), dict(resolution=32, hub_radius=20),
                                    dict(resolution=32, outer_radius=17),
                                    dict(resolution=32, rim_thickness=0)])
def test_invalid_domains_rejected(kwargs):
    with pytest.raises(ValueError):
        build_wheel_domain(**kwargs)


def _components(d, load):
    ix, iy = np.divmod(d.loaded_nodes, d.nely + 1)
    cx, cy = d.center
    px, py = ix - cx, cy - iy
    rad = np.hypot(px, py)
    ux, uy = px / rad, py / rad
    fx, fy = load.nodal_forces[2 * d.loaded_nodes], load.nodal_forces[2 * d.loaded_nodes + 1]
    return fx * ux + fy * uy, -fx * uy + fy * ux


def test_zero_force_ratio_is_purely_tangential():
    d = build_wheel_domain(32)
    radial, tangential = _components(d, build_surface_loads(d, 0.0))
    assert np.all(radial == pytest.approx(0.0, abs=1e-15))
    assert np.all(tangential > 0)


@pytest.mark.parametrize("fr", [0.1, 0.2, 0.3, 0.4])
def test_force_ratio_holds_at_every_loaded_node(fr):
    d = build_wheel_domain(32)
    radial, tangential = _components(d, build_surface_loads(d, fr))
    np.testing.assert_allclose(np.abs(radial) / np.abs(tangential), fr, atol=1e-12)
    assert np.all(radial < 0)  # compressive, pointing inwards


def test_default_shear_totals_one_unit():
    d = build_wheel_domain(40)
    _, tangential = _components(d, build_surface_loads(d, 0.2))
    assert tangential.sum() == pytest.approx(1.0, rel=1e-12)


def test_loads_validate_input():
    d = build_wheel_domain(16)
    with pytest.raises(ValueError):
        build_surface_loads(d, -0.1)


def test_volume_fraction_clamps():
    d = build_wheel_domain(32)
    assert volume_fraction_of(np.ones(d.shape), d) == 0.95
    assert volume_fraction_of(np.zeros(d.shape), d) == 0.05


def test_volume_fraction_of_synthetic_matches_count():
    d = build_wheel_domain(64)
    ref = render_wheel(SyntheticWheelSpec(spoke_count=5, resolution=64), d)
    solid = sum(int(ref[i, j]) for i in range(64) for j in range(64) if d.design_mask[i, j])
    assert volume_fraction_of(ref, d) == pytest.approx(solid / d.design_mask.sum(), abs=1e-15)


def test_volume_fraction_rejects_bad_reference():
    d = build_wheel_domain(16)
    with pytest.raises(ValueError):
        volume_fraction_of(np.full(d.shape, 0.5), d)
    with pytest.raises(ValueError):
        volume_fraction_of(np.zeros((8, 8)), d)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=8, max_value=48))
def test_partition_property(n):
    d = build_wheel_domain(n)
    assert np.all(d.passive_void.astype(int) + d.passive_solid + d.design_mask == 1)
    assert d.fixed_dofs.size > 0 and d.loaded_nodes.size > 0
    assert d.fixed_dofs.max() < d.n_dofs
