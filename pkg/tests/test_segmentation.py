import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from cadas.model import Grade, SepImage
from cadas.segmentation import (
    BinaryMask,
    EIGHT_CONNECTED,
    SegmentationError,
    cleanup_mask,
    combined_distance,
    disk_element,
    foreground_mask,
    grid_interval,
    median_filter,
    median_filter_array,
    otsu_threshold,
    slic_superpixels,
)
from cadas.synth import SynthSpec, generate


def brute_force_median(arr, window):
    """Naive per-pixel sorted-window median with edge replication."""
    half = window // 2
    h, w, c = arr.shape
    padded = np.pad(arr, ((half, half), (half, half), (0, 0)), mode="edge")
    out = np.empty_like(arr)
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                win = padded[y : y + window, x : x + window, ch].ravel()
                out[y, x, ch] = sorted(win)[len(win) // 2]
    return out


class TestMedianFilter:
    def test_constant_image_unchanged(self):
        img = SepImage(pixels=np.full((32, 32, 3), 77, dtype=np.uint8), id="c")
        assert np.array_equal(median_filter(img, 9).pixels, img.pixels)

    def test_single_bright_pixel_removed(self):
        arr = np.zeros((32, 32, 3), dtype=np.uint8)
        arr[16, 16] = 255
        out = median_filter(SepImage(pixels=arr, id="p"), 9)
        assert out.pixels.max() == 0

    def test_matches_brute_force_small(self):
        rng = np.random.default_rng(7)
        arr = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        assert np.array_equal(median_filter_array(arr, 5), brute_force_median(arr, 5))

    def test_matches_brute_force_via_image(self, random_image):
        out = median_filter(random_image, 9)
        assert np.array_equal(out.pixels, brute_force_median(random_image.pixels, 9))

    @pytest.mark.parametrize("window", [2, 1, 8])
    def test_bad_window_rejected(self, window, random_image):
        with pytest.raises(SegmentationError):
            median_filter(random_image, window)


class TestSlicArithmetic:
    def test_grid_interval_exact(self):
        assert grid_interval(600, 500, 3000) == 10.0

    def test_zero_color_distance(self):
        assert combined_distance(0.0, 3.0, 10.0, 10.0, "standard") == 3.0

    def test_standard_rule_hand_value(self):
        # d_rgb 5, d_xy 10, N 10, m 10: 5 + (10/10)*10 = 15
        assert combined_distance(5.0, 10.0, 10.0, 10.0, "standard") == 15.0

    def test_paper_literal_hand_value(self):
        # printed form: 5 + 10/(10*10) = 5.1
        assert combined_distance(5.0, 10.0, 10.0, 10.0, "paper-literal") == pytest.approx(5.1)

    def test_paper_literal_degenerate_plane_distance(self):
        assert combined_distance(5.0, 0.0, 10.0, 10.0, "paper-literal") == np.inf


def _assert_partition_connected(labels):
    for lab in np.unique(labels):
        _, n = ndimage.label(labels == lab, structure=EIGHT_CONNECTED)
        assert n == 1, f"superpixel {lab} split into {n} pieces"


class TestSlic:
    def test_every_pixel_assigned_and_bounded(self, random_image):
        sp = slic_superpixels(random_image, k=40)
        assert sp.labels.shape == (48, 64)
        assert sp.labels.min() >= 0
        assert sp.n_superpixels <= 40
        assert sp.labels.max() == sp.n_superpixels - 1
        _assert_partition_connected(sp.labels)

    def test_k_equals_pixel_count_gives_singletons(self):
        rng = np.random.default_rng(3)
        img = SepImage(pixels=rng.integers(0, 256, (32, 34, 3), dtype=np.uint8), id="s")
        sp = slic_superpixels(img, k=32 * 34)
        assert sp.n_superpixels == 32 * 34
        assert np.bincount(sp.labels.ravel()).max() == 1

    def test_deterministic(self, random_image):
        a = slic_superpixels(random_image, k=30)
        b = slic_superpixels(random_image, k=30)
        assert np.array_equal(a.labels, b.labels)

    def test_k_out_of_range(self, random_image):
        with pytest.raises(SegmentationError):
            slic_superpixels(random_image, k=0)
        with pytest.raises(SegmentationError):
            slic_superpixels(random_image, k=48 * 64 + 1)

    def test_average_area_on_synthetic_tissue(self):
        sample = generate(SynthSpec(grade=Grade.CIN1, seed=2, width=200, height=150, cell_count=18))
        sp = slic_superpixels(sample.image, k=300)
        mean_area = 200 * 150 / sp.n_superpixels
        ideal = 200 * 150 / 300
        assert ideal / 4 <= mean_area <= ideal * 4

    def test_median_area_bounded_with_dense_superpixels(self):
        # superpixels must stay below the ~20x20 size of one nucleus
        sample = generate(SynthSpec(grade=Grade.CIN2, seed=4, width=200, height=150, cell_count=18))
        sp = slic_superpixels(sample.image, k=2000)
        areas = np.bincount(sp.labels.ravel())
        assert np.median(areas) <= 400


def brute_force_otsu(values):
    """Maximize between-class variance over every candidate split."""
    v = np.sort(np.asarray(values, dtype=float))
    best_thr, best_score = None, -np.inf
    for i in range(1, len(v)):
        if v[i] == v[i - 1]:
            continue
        thr = (v[i] + v[i - 1]) / 2
        lo, hi = v[:i], v[i:]
        score = (len(lo) / len(v)) * (len(hi) / len(v)) * (lo.mean() - hi.mean()) ** 2
        if score > best_score:
            best_thr, best_score = thr, score
    return best_thr


class TestOtsu:
    def test_two_population_split(self):
        values = np.array([40.0, 40.0, 40.0, 200.0, 200.0])
        thr = otsu_threshold(values)
        assert thr == brute_force_otsu(values) == 120.0
        assert (values < thr).sum() == 3

    @given(
        arrays(
            np.float64,
            st.integers(2, 40),
            elements=st.floats(0, 255, allow_nan=False),
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, values):
        if np.ptp(values) == 0:
            return
        assert otsu_threshold(values) == pytest.approx(brute_force_otsu(values))


class TestForeground:
    def _two_tone_setup(self):
        arr = np.full((40, 40, 3), 200, dtype=np.uint8)
        arr[:, :20] = 40
        img = SepImage(pixels=arr, id="tt")
        sp = slic_superpixels(img, k=16)
        return img, sp

    def test_darker_population_is_foreground(self):
        img, sp = self._two_tone_setup()
        res = foreground_mask(sp, img)
        assert not res.degenerate
        assert res.mask.bits[:, :20].all()
        assert not res.mask.bits[:, 20:].any()

    def test_all_white_degenerate(self):
        img = SepImage(pixels=np.full((32, 32, 3), 255, dtype=np.uint8), id="w")
        sp = slic_superpixels(img, k=9)
        res = foreground_mask(sp, img)
        assert res.degenerate
        assert not res.mask.bits.any()

    def test_shape_mismatch_rejected(self, random_image):
        img, sp = self._two_tone_setup()
        with pytest.raises(SegmentationError, match="does not match"):
            foreground_mask(sp, random_image)

    def test_manual_threshold(self):
        img, sp = self._two_tone_setup()
        res = foreground_mask(sp, img, mode="fixed", value=128.0)
        means = {40.0: True, 200.0: False}
        for sp_id in range(sp.n_superpixels):
            mean_rgb = sp.centers[sp_id, 0]
            expected_fg = means[round(mean_rgb)]
            claimed = res.mask.bits[sp.labels == sp_id]
            assert claimed.all() == expected_fg


def brute_force_closing(bits, radius):
    """Independent dilate-then-erode with explicit offset loops."""
    offsets = [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if dx * dx + dy * dy <= radius * radius
    ]
    h, w = bits.shape
    pad = 2 * radius
    canvas = np.zeros((h + 2 * pad, w + 2 * pad), dtype=bool)
    canvas[pad : pad + h, pad : pad + w] = bits
    dil = np.zeros_like(canvas)
    for y in range(canvas.shape[0]):
        for x in range(canvas.shape[1]):
            if canvas[y, x]:
                for dy, dx in offsets:
                    dil[y + dy, x + dx] = True
    ero = np.zeros_like(canvas)
    for y in range(radius, canvas.shape[0] - radius):
        for x in range(radius, canvas.shape[1] - radius):
            if all(dil[y + dy, x + dx] for dy, dx in offsets):
                ero[y, x] = True
    return ero[pad : pad + h, pad : pad + w]


class TestCleanup:
    def test_component_below_limit_removed(self):
        bits = np.zeros((30, 30), dtype=bool)
        bits[2:9, 2:9] = True  # 49 px
        assert bits.sum() == 49
        out = cleanup_mask(BinaryMask(bits=bits), min_area=50, close_radius=0)
        assert not out.bits.any()

    def test_component_at_limit_kept(self):
        bits = np.zeros((30, 30), dtype=bool)
        bits[2:7, 2:12] = True  # 50 px
        out = cleanup_mask(BinaryMask(bits=bits), min_area=50, close_radius=0)
        assert out.bits.sum() >= 50

    def test_closing_merges_one_pixel_gap(self):
        bits = np.zeros((20, 20), dtype=bool)
        bits[8:12, 2:9] = True
        bits[8:12, 10:17] = True  # gap at column 9
        out = cleanup_mask(BinaryMask(bits=bits), min_area=1, close_radius=3)
        _, n = ndimage.label(out.bits, structure=EIGHT_CONNECTED)
        assert n == 1
        assert np.array_equal(out.bits, brute_force_closing(bits, 3))

    def test_closing_matches_brute_force_random(self):
        rng = np.random.default_rng(5)
        bits = rng.random((24, 22)) < 0.35
        out = cleanup_mask(BinaryMask(bits=bits), min_area=1, close_radius=2)
        assert np.array_equal(out.bits, brute_force_closing(bits, 2))

    @given(
        arrays(np.bool_, (18, 18), elements=st.booleans()),
        st.integers(1, 60),
        st.integers(0, 3),
    )
    @settings(max_examples=50, deadline=None)
    def test_never_increases_component_count(self, bits, min_area, radius):
        _, before = ndimage.label(bits, structure=EIGHT_CONNECTED)
        out = cleanup_mask(BinaryMask(bits=bits), min_area=min_area, close_radius=radius)
        _, after = ndimage.label(out.bits, structure=EIGHT_CONNECTED)
        assert after <= before

    def test_disk_element_shape(self):
        se = disk_element(1)
        assert se.sum() == 5  # plus-shaped
