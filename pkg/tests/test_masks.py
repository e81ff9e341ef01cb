import numpy as np
import pytest
from scipy import ndimage

from wmd.encoder import GeometryChain, InputForm, RoiSpec
from wmd.errors import CorruptedWindowError, ShapeError
from wmd.masks import (
    MaskConfig,
    composite_window_mask,
    detect_corruption,
    read_mask_png,
    repair_mask,
    segment_person_depth,
    write_mask_png,
)

IDENTITY_96 = GeometryChain(roi=None, target=96)


def synthetic_depth(size=160, leg_depth=1200, bg=3000):
    """Hand-built depth scene: far wall, ramped floor, one 'body' blob."""
    depth = np.full((size, size), bg, dtype=np.float64)
    floor_start = size - size // 4
    rows = np.arange(floor_start, size)
    depth[floor_start:, :] = (2400 + (1000 - 2400) * (rows - floor_start) / (size - 1 - floor_start))[:, None]
    body = np.zeros((size, size), dtype=bool)
    body[size // 4 : size // 2, size // 3 : 2 * size // 3] = True
    depth[body] = leg_depth
    return depth, body


class TestSegmentPersonDepth:
    def test_recovers_rendered_legs_exactly(self, walk_renderer):
        r = walk_renderer
        for i in (3, 80, 150):
            frame = r.frame(i)
            mask = segment_person_depth(frame.depth.astype(np.float64))
            assert np.array_equal(mask, r.leg_mask(i))

    def test_handcrafted_scene(self):
        depth, body = synthetic_depth()
        mask = segment_person_depth(depth)
        assert np.array_equal(mask, body)

    def test_uniform_background_empty(self):
        mask = segment_person_depth(np.full((64, 64), 3000.0))
        assert not mask.any()

    def test_uniform_near_depth_full_frame(self):
        # flat 1000 mm everywhere: inside the band, and the floor fit has no
        # slope, so nothing is removed
        mask = segment_person_depth(np.full((64, 64), 1000.0))
        assert mask.all()

    def test_all_invalid_is_empty(self):
        mask = segment_person_depth(np.zeros((64, 64)))
        assert not mask.any()

    def test_largest_component_kept(self):
        depth = np.full((100, 100), 3000.0)
        depth[10:40, 10:40] = 1200.0  # 900 px
        depth[60:70, 60:70] = 1200.0  # 100 px
        mask = segment_person_depth(depth)
        assert mask[20, 20] and not mask[65, 65]

    def test_single_component_property(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            depth = rng.choice([500.0, 1500.0, 3000.0], size=(48, 48), p=[0.1, 0.2, 0.7])
            mask = segment_person_depth(depth)
            if mask.any():
                _, count = ndimage.label(mask, structure=np.ones((3, 3)))
                assert count == 1

    def test_rejects_bad_shape(self):
        with pytest.raises(ShapeError):
            segment_person_depth(np.zeros((4, 4, 3)))


class TestDetectCorruption:
    def test_empty_is_corrupted(self):
        assert detect_corruption(np.zeros((50, 50), dtype=bool))

    def test_ten_percent_fine(self):
        mask = np.zeros((100, 100), dtype=bool)
        mask[:10, :] = True  # exactly 10% foreground
        assert not detect_corruption(mask)

    def test_fifty_percent_corrupted(self):
        mask = np.zeros((100, 100), dtype=bool)
        mask[:50, :] = True
        assert detect_corruption(mask)

    def test_thresholds_configurable(self):
        mask = np.zeros((100, 100), dtype=bool)
        mask[:50, :] = True
        assert not detect_corruption(mask, MaskConfig(corruption_high=0.6))


class TestRepairMask:
    def test_hole_filled(self):
        mask = np.zeros((40, 40), dtype=bool)
        mask[5:30, 5:30] = True
        mask[12:18, 12:18] = False
        out = repair_mask(mask)
        assert out[14, 14]
        assert out[5:30, 5:30].all()

    def test_solid_unchanged(self):
        mask = np.zeros((40, 40), dtype=bool)
        mask[8:30, 8:30] = True
        np.testing.assert_array_equal(repair_mask(mask), mask)

    def test_small_notch_closed(self):
        # morphology oracle: a 3-px edge notch disappears under a 5x5 closing
        solid = np.zeros((40, 40), dtype=bool)
        solid[10:30, 10:30] = True
        notched = solid.copy()
        notched[10:13, 19:22] = False
        out = repair_mask(notched)
        np.testing.assert_array_equal(out, solid)

    def test_never_shrinks(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            mask = ndimage.binary_dilation(rng.uniform(size=(32, 32)) > 0.9)
            out = repair_mask(mask)
            assert (out | mask).sum() == out.sum()


class TestCompositeWindowMask:
    def _blob(self, x0, x1):
        m = np.zeros((96, 96), dtype=bool)
        m[20:70, x0:x1] = True
        return m

    def test_identical_masks_both_forms(self):
        m = self._blob(30, 60)
        for form in (InputForm.DIF, InputForm.ADD):
            out = composite_window_mask([m, m, m, m], form, IDENTITY_96, source_window=4)
            np.testing.assert_array_equal(out.mask, m)
            assert out.source_window == 4
            assert not out.corrupted

    def test_dif_uses_first_and_last_only(self):
        a, mid, b = self._blob(5, 20), self._blob(40, 55), self._blob(70, 85)
        out = composite_window_mask([a, mid, mid, b], InputForm.DIF, IDENTITY_96)
        np.testing.assert_array_equal(out.mask, a | b)
        assert out.mask.sum() == a.sum() + b.sum()  # disjoint: areas add

    def test_add_unions_all_four(self):
        masks = [self._blob(5, 20), self._blob(25, 40), self._blob(45, 60), self._blob(65, 80)]
        out = composite_window_mask(masks, InputForm.ADD, IDENTITY_96)
        expected = masks[0] | masks[1] | masks[2] | masks[3]
        np.testing.assert_array_equal(out.mask, expected)

    def test_add_superset_of_dif(self):
        rng = np.random.default_rng(2)
        masks = [ndimage.binary_dilation(rng.uniform(size=(96, 96)) > 0.92, iterations=3) for _ in range(4)]
        dif = composite_window_mask(masks, InputForm.DIF, IDENTITY_96, corrupted=[False] * 4)
        add = composite_window_mask(masks, InputForm.ADD, IDENTITY_96, corrupted=[False] * 4)
        assert np.all(add.mask | dif.mask == add.mask)

    def test_corrupted_member_rejected(self):
        m = self._blob(30, 60)
        with pytest.raises(CorruptedWindowError):
            composite_window_mask([m, m, np.zeros_like(m), m], InputForm.ADD, IDENTITY_96)

    def test_geometry_applied(self):
        m = self._blob(30, 60)
        chain = GeometryChain(roi=RoiSpec(19, 77, 0, 96), target=64)
        out = composite_window_mask([m, m, m, m], InputForm.ADD, chain)
        assert out.mask.shape == (64, 64)
        assert out.mask.any()

    def test_wrong_count(self):
        m = self._blob(30, 60)
        with pytest.raises(ShapeError):
            composite_window_mask([m, m, m], InputForm.ADD, IDENTITY_96)


class TestMaskPng:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        mask = rng.uniform(size=(64, 64)) > 0.6
        path = tmp_path / "m.png"
        write_mask_png(path, mask)
        np.testing.assert_array_equal(read_mask_png(path), mask)
