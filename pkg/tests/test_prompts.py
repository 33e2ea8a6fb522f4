import numpy as np
import pytest

from segloop.errors import EmptyMaskError, PromptError
from segloop.morph import boundary_2d, gaussian_blur, threshold
from segloop.prompts import (BoxPrompt, Polarity, PromptConfig, PromptSet,
                             PointPrompt, Scribble, ScribbleStyle, build_prompt_set,
                             filter_small_regions, gen_boundary_scribbles,
                             gen_centerline_scribbles, ground_truth_box,
                             parse_prompt_set, prompt_volume_ratio, sample_points,
                             select_slices, serialize_prompt_set, warp_dilation_bound_px)
from segloop.prompts import _scribble_pixels_for_slice
from segloop.rng import Rng
from segloop.volume import BinaryMask, SliceAxis, connected_components, extract_slice

from conftest import make_mask


def _mask_from_voxels(dims, voxels, spacing=(1.0, 1.0, 1.0)):
    data = np.zeros(dims, np.uint8)
    for v in voxels:
        data[v] = 1
    return BinaryMask(data, spacing)


def _empty(dims=(8, 8, 8), spacing=(1.0, 1.0, 1.0)):
    return BinaryMask(np.zeros(dims, np.uint8), spacing)


# ---------------------------------------------------------------------------
# Points and boxes
# ---------------------------------------------------------------------------

def test_sample_points_single_voxel_region():
    fn = _mask_from_voxels((8, 8, 8), [(2, 3, 4)])
    pts = sample_points(fn, _empty(), 1, 1, Rng(0))
    assert pts == [PointPrompt((2, 3, 4), Polarity.POSITIVE)]


def test_sample_points_empty_regions():
    assert sample_points(_empty(), _empty(), 3, 3, Rng(0)) == []


def test_sample_points_clamps_to_region_size():
    fn = _mask_from_voxels((8, 8, 8), [(1, 1, 1), (2, 2, 2)])
    pts = sample_points(fn, _empty(), 5, 0, Rng(0))
    assert len(pts) == 2
    assert len({p.voxel for p in pts}) == 2  # without replacement


def test_sample_points_uniformity_chi2():
    voxels = [(i, 0, 0) for i in range(10)]
    fn = _mask_from_voxels((10, 4, 4), voxels)
    counts = {v: 0 for v in voxels}
    for trial in range(10000):
        (p,) = sample_points(fn, _empty((10, 4, 4)), 1, 0, Rng(trial))
        counts[p.voxel] += 1
    # Binomial(10000, 0.1): mean 1000, sigma 30; require within 5 sigma
    for v, c in counts.items():
        assert abs(c - 1000) <= 150, (v, c)


def test_ground_truth_box_cases():
    single = _mask_from_voxels((10, 10, 10), [(5, 6, 7)])
    assert ground_truth_box(single) == BoxPrompt((5, 6, 7), (5, 6, 7))
    full = BinaryMask(np.ones((3, 4, 5), np.uint8), (1, 1, 1))
    assert ground_truth_box(full) == BoxPrompt((0, 0, 0), (2, 3, 4))
    two = _mask_from_voxels((10, 10, 10), [(1, 2, 3), (4, 1, 8)])
    assert ground_truth_box(two) == BoxPrompt((1, 1, 3), (4, 2, 8))
    with pytest.raises(EmptyMaskError):
        ground_truth_box(_empty())


# ---------------------------------------------------------------------------
# Region filtering
# ---------------------------------------------------------------------------

def _component_of_size(dims, n, start=(0, 0, 0)):
    voxels = []
    nx, ny, nz = dims
    i, j, k = start
    for count in range(n):
        voxels.append(((i + count) % nx, (j + (i + count) // nx) % ny, k))
    return voxels


def test_filter_small_regions_paper_threshold():
    # 99-voxel component removed, 100-voxel component kept
    block99 = [(i % 7, (i // 7) % 7, i // 49) for i in range(99)]
    m99 = _mask_from_voxels((7, 7, 8), block99)
    assert filter_small_regions(m99, 100).is_empty()
    block100 = [(i % 7, (i // 7) % 7, i // 49) for i in range(100)]
    m100 = _mask_from_voxels((7, 7, 8), block100)
    assert np.array_equal(filter_small_regions(m100, 100).data, m100.data)


def test_filter_small_regions_mixed():
    data = np.zeros((20, 20, 8), np.uint8)
    data[0:5, 0:5, 0:2] = 1   # 50 voxels
    data[10:16, 10:15, 0:5] = 1  # 150 voxels
    m = BinaryMask(data, (1, 1, 1))
    out = filter_small_regions(m, 100)
    assert out.voxel_count == 150
    assert not out.data[0:5, 0:5, 0:2].any()


def test_filter_never_misclassifies(gen):
    for _ in range(20):
        m = make_mask(gen, dims=(14, 14, 14), p=0.25)
        out = filter_small_regions(m, 30)
        labels, sizes = connected_components(m, 26)
        for k, size in enumerate(sizes, start=1):
            kept = bool(out.data[labels == k].any())
            assert kept == (size >= 30)


# ---------------------------------------------------------------------------
# Slice selection
# ---------------------------------------------------------------------------

def test_select_slices_cases():
    data = np.zeros((4, 4, 24), np.uint8)
    data[1, 1, 10:20] = 1
    m = BinaryMask(data, (1, 1, 1))
    assert select_slices(m, SliceAxis.TRANSVERSE, 1) == list(range(10, 20))
    assert select_slices(m, SliceAxis.TRANSVERSE, 5) == [10, 15]
    data2 = np.zeros((4, 4, 8), np.uint8)
    data2[1, 1, 3:5] = 1
    assert select_slices(BinaryMask(data2, (1, 1, 1)), SliceAxis.TRANSVERSE, 5) == [3]


def test_select_slices_skips_empty_and_keeps_phase():
    data = np.zeros((4, 4, 12), np.uint8)
    data[1, 1, 2] = 1
    data[1, 1, 5] = 1  # not on the comb (2 + 2k)
    data[1, 1, 6] = 1
    m = BinaryMask(data, (1, 1, 1))
    assert select_slices(m, SliceAxis.TRANSVERSE, 2) == [2, 6]


def test_select_slices_increasing_property(gen):
    for _ in range(20):
        m = make_mask(gen, dims=(10, 10, 16), p=0.3)
        for freq in (1, 2, 5):
            sel = select_slices(m, SliceAxis.TRANSVERSE, freq)
            assert sel == sorted(sel)
            assert all((i - sel[0]) % freq == 0 for i in sel) if sel else True


# ---------------------------------------------------------------------------
# Scribble generation
# ---------------------------------------------------------------------------

def _line_region(dims=(16, 16, 8), k=3):
    data = np.zeros(dims, np.uint8)
    data[4:12, 8, k] = 1
    return BinaryMask(data, (1, 1, 1))


def test_centerline_line_fixed_point():
    region = _line_region()
    cfg = PromptConfig(scribble_style=ScribbleStyle.CENTERLINE, break_coverage=0.999999)
    out = gen_centerline_scribbles(region, cfg, Polarity.POSITIVE, Rng(5))
    assert len(out) == 1
    (s,) = out
    assert s.slice_index == 3 and s.slice_axis is SliceAxis.TRANSVERSE
    assert set(s.voxels) == {(i, 8, 3) for i in range(4, 12)}


def test_scribbles_empty_region():
    cfg = PromptConfig(scribble_style=ScribbleStyle.CENTERLINE)
    assert gen_centerline_scribbles(_empty(), cfg, Polarity.POSITIVE, Rng(0)) == []
    assert gen_boundary_scribbles(_empty(), cfg, Polarity.NEGATIVE, Rng(0)) == []


def test_unwarped_scribbles_subset_of_region(gen):
    cfg_c = PromptConfig(scribble_style=ScribbleStyle.CENTERLINE)
    cfg_b = PromptConfig(scribble_style=ScribbleStyle.BOUNDARY)
    for _ in range(25):
        region = make_mask(gen, dims=(16, 16, 10), p=0.2, smooth=1.6)
        voxset = {tuple(v) for v in np.argwhere(region.bool())}
        for cfg, genfn in ((cfg_c, gen_centerline_scribbles), (cfg_b, gen_boundary_scribbles)):
            for s in genfn(region, cfg, Polarity.POSITIVE, Rng(3)):
                assert set(s.voxels) <= voxset


def test_warped_scribbles_within_dilation_bound(gen):
    cfg = PromptConfig(scribble_style=ScribbleStyle.WARPED_CENTERLINE)
    bound = warp_dilation_bound_px(cfg)
    for trial in range(15):
        region = make_mask(gen, dims=(20, 20, 6), p=0.25, smooth=1.8)
        for s in gen_centerline_scribbles(region, cfg, Polarity.POSITIVE, Rng(trial)):
            plane = extract_slice(region, s.slice_axis, s.slice_index).astype(bool)
            support = np.argwhere(plane)
            for v in s.voxels:
                px = np.array([v[0], v[1]])
                d = np.sqrt(((support - px) ** 2).sum(axis=1)).min()
                assert d <= bound


class _ForcedThreshold:
    """Duck-typed Rng whose uniform() is pinned; noise stays seeded."""

    def __init__(self, seed, u):
        self._gen = np.random.default_rng(seed)
        self._u = u

    @property
    def gen(self):
        return self

    def uniform(self):
        return self._u

    def standard_normal(self, shape):
        return self._gen.standard_normal(shape)

    def spawn(self, *keys):
        return self


def test_boundary_ring_reference_pipeline():
    yy, xx = np.mgrid[0:16, 0:16]
    disk = (((xx - 8) ** 2 + (yy - 8) ** 2) <= 25).astype(np.uint8)
    cfg = PromptConfig(scribble_style=ScribbleStyle.BOUNDARY, break_coverage=0.999999,
                       boundary_blur_px=2.0)
    blurred = gaussian_blur(disk.astype(np.float64), 2.0)
    lo, hi = float(blurred.min()), float(blurred.max())
    u = (0.5 - lo) / (hi - lo)  # forces the threshold to exactly 0.5
    expected_ring = boundary_2d(threshold(blurred, 0.5)) & disk
    got = _scribble_pixels_for_slice(disk, ScribbleStyle.BOUNDARY, cfg,
                                     _ForcedThreshold(1, u))
    # coverage ~1 keeps (almost surely) every ring pixel
    assert np.array_equal(got, expected_ring)
    assert expected_ring.sum() > 8  # a ring, not a speck


def test_boundary_scribble_near_modified_support(gen):
    # unwarped boundary pixels sit on the clipped outline: within a 1-pixel
    # dilation of the modified mask support by construction
    region = make_mask(gen, dims=(16, 16, 6), p=0.3, smooth=2.0)
    cfg = PromptConfig(scribble_style=ScribbleStyle.BOUNDARY)
    for s in gen_boundary_scribbles(region, cfg, Polarity.POSITIVE, Rng(2)):
        plane = extract_slice(region, s.slice_axis, s.slice_index).astype(bool)
        for v in s.voxels:
            assert plane[v[0], v[1]]


# ---------------------------------------------------------------------------
# Ratio
# ---------------------------------------------------------------------------

def test_prompt_volume_ratio():
    gt = BinaryMask(np.ones((10, 10, 5), np.uint8), (1, 1, 1))
    empty_set = PromptSet([], None, [], 0)
    assert prompt_volume_ratio([empty_set], gt) == 0.0
    full_scribble = Scribble(tuple((i, j, 0) for i in range(10) for j in range(10)),
                             Polarity.POSITIVE, SliceAxis.TRANSVERSE, 0,
                             ScribbleStyle.CENTERLINE)
    sets = [PromptSet([], None, [full_scribble], 0)]
    assert prompt_volume_ratio(sets, BinaryMask.from_bool(
        np.pad(np.ones((10, 10, 1), bool), ((0, 0), (0, 0), (0, 4))), (1, 1, 1))) == 1.0
    s30 = Scribble(tuple((i, 0, 0) for i in range(10)) + tuple((i, 1, 0) for i in range(10))
                   + tuple((i, 2, 0) for i in range(10)),
                   Polarity.POSITIVE, SliceAxis.TRANSVERSE, 0, ScribbleStyle.CENTERLINE)
    s20 = Scribble(tuple((i, 3, 0) for i in range(10)) + tuple((i, 4, 0) for i in range(10)),
                   Polarity.POSITIVE, SliceAxis.TRANSVERSE, 0, ScribbleStyle.CENTERLINE)
    gt500 = BinaryMask.from_bool(np.pad(np.ones((10, 10, 5), bool), ((0, 0), (0, 0), (0, 0))),
                                 (1, 1, 1))
    sets = [PromptSet([], None, [s30], 0), PromptSet([], None, [s20], 1)]
    assert prompt_volume_ratio(sets, gt500) == pytest.approx(0.1)
    with pytest.raises(EmptyMaskError):
        prompt_volume_ratio(sets, _empty((10, 10, 5)))


# ---------------------------------------------------------------------------
# Prompt set assembly
# ---------------------------------------------------------------------------

def _blob_gt(gen, dims=(24, 24, 24)):
    while True:
        m = make_mask(gen, dims=dims, p=0.12, smooth=2.5)
        if m.voxel_count >= 150:
            return m


def test_build_iteration0_points_only(gen):
    gt = _blob_gt(gen)
    cfg = PromptConfig(use_points=True, points_per_iteration=1, use_box=False,
                       scribble_style=None)
    ps = build_prompt_set(gt, None, cfg, 0, Rng(1))
    assert len(ps.points) == 1
    (p,) = ps.points
    assert p.polarity is Polarity.POSITIVE
    assert gt.data[p.voxel] == 1
    assert ps.box is None and ps.scribbles == []


def test_build_iteration0_with_box(gen):
    gt = _blob_gt(gen)
    cfg = PromptConfig(use_box=True)
    ps = build_prompt_set(gt, None, cfg, 0, Rng(1))
    assert ps.box == ground_truth_box(gt)


def test_build_perfect_prediction_empty_prompts(gen):
    gt = _blob_gt(gen)
    cfg = PromptConfig(scribble_style=ScribbleStyle.WARPED_CENTERLINE)
    ps = build_prompt_set(gt, gt, cfg, 3, Rng(1))
    assert ps.points == [] and ps.scribbles == [] and ps.box is None


def test_build_iteration1_polarity_subsets(gen):
    dims = (24, 24, 24)
    gt_data = np.zeros(dims, np.uint8)
    gt_data[4:16, 4:16, 4:16] = 1
    gt = BinaryMask(gt_data, (1, 1, 1))
    pred_data = gt_data.copy()
    pred_data[4:16, 4:16, 4:9] = 0           # FN block (720 voxels)
    pred_data[18:23, 18:23, 12:18] = 1       # FP block (150 voxels)
    pred = BinaryMask(pred_data, (1, 1, 1))
    fn = gt.bool() & ~pred.bool()
    fp = pred.bool() & ~gt.bool()
    cfg = PromptConfig(points_per_iteration=3,
                       scribble_style=ScribbleStyle.CENTERLINE)
    ps = build_prompt_set(gt, pred, cfg, 1, Rng(9))
    pos = [p.voxel for p in ps.points if p.polarity is Polarity.POSITIVE]
    neg = [p.voxel for p in ps.points if p.polarity is Polarity.NEGATIVE]
    assert pos and neg
    assert all(fn[v] for v in pos)
    assert all(fp[v] for v in neg)
    for s in ps.scribbles:
        region = fn if s.polarity is Polarity.POSITIVE else fp
        assert all(region[v] for v in s.voxels)
    assert {s.polarity for s in ps.scribbles} == {Polarity.POSITIVE, Polarity.NEGATIVE}


def test_build_fallback_keeps_largest_component(gen):
    dims = (16, 16, 16)
    gt_data = np.zeros(dims, np.uint8)
    gt_data[2:10, 2:10, 2:10] = 1
    gt = BinaryMask(gt_data, (1, 1, 1))
    pred_data = gt_data.copy()
    pred_data[3:6, 3:6, 3:6] = 0     # 27-voxel FN, below the 100 cutoff
    pred_data[3:5, 3:5, 12:14] = 0   # no effect outside gt
    pred = BinaryMask(pred_data, (1, 1, 1))
    cfg = PromptConfig(points_per_iteration=1)
    ps = build_prompt_set(gt, pred, cfg, 2, Rng(0))
    fn = gt.bool() & ~pred.bool()
    pos = [p for p in ps.points if p.polarity is Polarity.POSITIVE]
    assert pos, "fallback must keep prompting the largest small component"
    assert all(fn[p.voxel] for p in pos)


def test_prompt_set_invariants_enforced():
    with pytest.raises(PromptError):
        PromptSet([], BoxPrompt((0, 0, 0), (1, 1, 1)), [], iteration=1)
    with pytest.raises(PromptError):
        PromptSet([PointPrompt((0, 0, 0), Polarity.NEGATIVE)], None, [], iteration=0)
    with pytest.raises(PromptError):
        Scribble((), Polarity.POSITIVE, SliceAxis.TRANSVERSE, 0, ScribbleStyle.CENTERLINE)
    with pytest.raises(PromptError):
        Scribble(((1, 2, 3),), Polarity.POSITIVE, SliceAxis.TRANSVERSE, 0,
                 ScribbleStyle.CENTERLINE)


def test_build_deterministic_bytes(gen):
    gt = _blob_gt(gen)
    cfg = PromptConfig(use_box=True, scribble_style=ScribbleStyle.WARPED_CENTERLINE)
    a = serialize_prompt_set(build_prompt_set(gt, None, cfg, 0, Rng(77)))
    b = serialize_prompt_set(build_prompt_set(gt, None, cfg, 0, Rng(77)))
    assert a.encode() == b.encode()
    c = serialize_prompt_set(build_prompt_set(gt, None, cfg, 0, Rng(78)))
    assert a != c  # different seed, different samples


def test_serialization_round_trip(gen):
    gt = _blob_gt(gen)
    cfg = PromptConfig(use_box=True, points_per_iteration=2,
                       scribble_style=ScribbleStyle.CENTERLINE)
    ps = build_prompt_set(gt, None, cfg, 0, Rng(4))
    text = serialize_prompt_set(ps)
    back = parse_prompt_set(text, iteration=0)
    assert [p.voxel for p in back.points] == [p.voxel for p in ps.points]
    assert back.box == ps.box
    assert [s.voxels for s in back.scribbles] == [s.voxels for s in ps.scribbles]
    assert serialize_prompt_set(back) == text


def test_all_prompt_voxels_in_bounds(gen):
    gt = _blob_gt(gen)
    cfg = PromptConfig(use_box=True, scribble_style=ScribbleStyle.WARPED_BOUNDARY)
    ps = build_prompt_set(gt, None, cfg, 0, Rng(13))
    for pol in (Polarity.POSITIVE, Polarity.NEGATIVE):
        for v in ps.voxels_with_polarity(pol):
            assert all(0 <= v[ax] < gt.dims[ax] for ax in range(3))


def test_select_slices_longitudinal_axis():
    data = np.zeros((20, 6, 6), np.uint8)
    data[4:13, 2, 2] = 1
    m = BinaryMask(data, (1, 1, 1))
    assert select_slices(m, SliceAxis.LONGITUDINAL, 4) == [4, 8, 12]


def test_prompt_config_validation():
    with pytest.raises(PromptError):
        PromptConfig(slice_frequency=0)
    with pytest.raises(PromptError):
        PromptConfig(points_per_iteration=-1)
