import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import all_pairs_min, dice_oracle, hausdorff_oracle, nsd_oracle, surface_loops
from refsam3d.errors import InputError, UndefinedMetricError
from refsam3d.metrics import (
    BinaryMask,
    dice,
    evaluate_case,
    format_table,
    hausdorff,
    nsd,
    surface_distances,
    surface_voxels,
)


def line(*bits):
    return np.array(bits, dtype=np.uint8).reshape(1, 1, -1)


def random_pair(rng, dims, density):
    return (rng.random(dims) < density).astype(np.uint8), (rng.random(dims) < density).astype(np.uint8)


masks = hnp.arrays(np.bool_, st.tuples(*[st.integers(1, 5)] * 3))


# ---------------------------------------------------------------- worked examples
def test_identical_single_voxel():
    m = np.zeros((3, 3, 3), np.uint8)
    m[1, 1, 1] = 1
    assert dice(m, m) == 1.0 and nsd(m, m) == 1.0 and hausdorff(m, m) == 0.0


def test_half_overlap_line():
    p, g = line(1, 1, 0, 0), line(0, 1, 1, 0)
    assert dice(p, g) == 0.5
    assert hausdorff(p, g) == 1.0
    assert nsd(p, g, tau=1.0) == 1.0
    assert nsd(p, g, tau=0.5) == 0.5


def test_disjoint_voxels_distance_two():
    p, g = line(1, 0, 0), line(0, 0, 1)
    assert dice(p, g) == 0.0
    assert hausdorff(p, g) == 2.0
    assert nsd(p, g, tau=1.0) == 0.0
    assert nsd(p, g, tau=2.0) == 1.0  # the tolerance is inclusive


def test_anisotropic_spacing_scales_distances():
    p = np.zeros((2, 1, 1), np.uint8)
    g = np.zeros((2, 1, 1), np.uint8)
    p[0], g[1] = 1, 1
    assert hausdorff(BinaryMask(p, (2.5, 1, 1)), BinaryMask(g, (2.5, 1, 1))) == 2.5


def test_solid_cube_surface_is_shell():
    m = np.zeros((5, 5, 5), np.uint8)
    m[1:4, 1:4, 1:4] = 1
    s = surface_voxels(m)
    assert s.count == 26 and not s.bits[2, 2, 2]
    full = np.ones((3, 3, 3), np.uint8)
    assert surface_voxels(full).count == 26  # grid border counts as background


def test_both_empty_and_one_empty():
    z = np.zeros((2, 2, 2), np.uint8)
    one = z.copy()
    one[0, 0, 0] = 1
    assert dice(z, z) == 1.0 and nsd(z, z) == 1.0
    assert dice(one, z) == 0.0 and nsd(one, z) == 0.0
    with pytest.raises(UndefinedMetricError):
        hausdorff(one, z)


def test_hd95_ignores_single_outlier():
    g = np.zeros((1, 1, 60), np.uint8)
    g[0, 0, :40] = 1
    p = g.copy()
    p[0, 0, 59] = 1
    assert hausdorff(p, g) == 20.0
    assert hausdorff(p, g, 95) == pytest.approx(hausdorff_oracle(p, g, 95))
    assert hausdorff(p, g, 95) < 20.0


# ---------------------------------------------------------------- input validation
def test_non_binary_rejected():
    with pytest.raises(InputError):
        BinaryMask(np.full((2, 2, 2), 2))
    with pytest.raises(InputError):
        BinaryMask(np.zeros((2, 2)))
    with pytest.raises(InputError):
        BinaryMask(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))


def test_dims_and_spacing_mismatch():
    with pytest.raises(InputError):
        dice(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))
    with pytest.raises(InputError):
        nsd(BinaryMask(np.ones((2, 2, 2)), (1, 1, 2)), BinaryMask(np.ones((2, 2, 2))))
    with pytest.raises(InputError):
        nsd(np.ones((2, 2, 2)), np.ones((2, 2, 2)), tau=0.0)
    with pytest.raises(InputError):
        hausdorff(np.ones((2, 2, 2)), np.ones((2, 2, 2)), percentile=0)


# ---------------------------------------------------------------- oracle comparisons
@pytest.mark.parametrize("seed", range(12))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in rng.integers(1, 8, size=3))
    spacing = tuple(float(s) for s in rng.choice([0.5, 1.0, 1.5, 2.0], size=3))
    p, g = random_pair(rng, dims, rng.uniform(0.1, 0.7))
    p.flat[0] = g.flat[-1] = 1
    P, G = BinaryMask(p, spacing), BinaryMask(g, spacing)
    assert dice(P, G) == pytest.approx(dice_oracle(p, g), abs=1e-12)
    np.testing.assert_array_equal(surface_voxels(P).bits, surface_loops(p))
    d_pg, d_gp = surface_distances(P, G)
    sp, sg = surface_loops(p), surface_loops(g)
    np.testing.assert_allclose(d_pg, all_pairs_min(sp, sg, spacing), atol=1e-9)
    np.testing.assert_allclose(d_gp, all_pairs_min(sg, sp, spacing), atol=1e-9)
    for tau in (0.5, 1.0, 2.0):
        assert nsd(P, G, tau) == pytest.approx(nsd_oracle(p, g, tau, spacing), abs=1e-9)
    for q in (95.0, 100.0):
        assert hausdorff(P, G, q) == pytest.approx(hausdorff_oracle(p, g, q, spacing), abs=1e-9)


# ---------------------------------------------------------------- properties
@settings(max_examples=60, deadline=None)
@given(masks, st.data())
def test_symmetry(p, data):
    g = data.draw(hnp.arrays(np.bool_, p.shape))
    assert dice(p, g) == dice(g, p)
    assert nsd(p, g) == pytest.approx(nsd(g, p), abs=1e-12)
    if p.any() and g.any():
        assert hausdorff(p, g) == hausdorff(g, p)


@settings(max_examples=60, deadline=None)
@given(masks)
def test_identity(m):
    assert dice(m, m) == 1.0 and nsd(m, m) == 1.0
    if m.any():
        assert hausdorff(m, m) == 0.0


@settings(max_examples=60, deadline=None)
@given(masks, st.data())
def test_ranges_and_monotone_tau(p, data):
    g = data.draw(hnp.arrays(np.bool_, p.shape))
    assert 0.0 <= dice(p, g) <= 1.0
    values = [nsd(p, g, tau) for tau in (0.5, 1.0, 2.0, 4.0)]
    assert all(0.0 <= v <= 1.0 for v in values)
    assert values == sorted(values)


# ---------------------------------------------------------------- case rows
def test_evaluate_case_flags():
    z = np.zeros((2, 2, 2), np.uint8)
    one = z.copy()
    one[1, 1, 1] = 1
    row = evaluate_case("c0", "sphere", z, one)
    assert row.flags == ["empty-pred", "hd-undefined"] and math.isnan(row.hd)
    assert row.as_dict()["hd"] is None and row.dice == 0.0
    ok = evaluate_case("c1", "cube", one, one)
    assert ok.flags == [] and ok.as_dict() == {"case_id": "c1", "class": "cube", "dice": 1.0,
                                               "nsd": 1.0, "hd": 0.0, "flags": []}
    table = format_table([row, ok])
    assert "hd-undefined" in table and table.splitlines()[-1].startswith("mean")
