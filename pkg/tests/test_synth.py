import math

import numpy as np
import pytest

from cadas.model import Grade, in_papilla, region_of_point
from cadas.synth import (
    DEFAULT_BAND,
    SynthError,
    SynthSpec,
    generate,
    truth_cells_with_pixels,
    write_sample,
)


@pytest.fixture(scope="module")
def cin2_sample():
    return generate(SynthSpec(grade=Grade.CIN2, seed=5, overlap_fraction=0.1))


class TestSpec:
    def test_default_bands(self):
        assert DEFAULT_BAND[Grade.NORMAL] == 0.0
        assert DEFAULT_BAND[Grade.CIN1] == pytest.approx(1 / 3)
        assert DEFAULT_BAND[Grade.CIN2] == pytest.approx(2 / 3)
        assert DEFAULT_BAND[Grade.CIN3] == 1.0

    def test_invalid_overlap(self):
        with pytest.raises(SynthError):
            SynthSpec(grade=Grade.NORMAL, overlap_fraction=1.0)

    def test_infeasible_cell_count(self):
        with pytest.raises(SynthError, match="could not place"):
            generate(SynthSpec(grade=Grade.NORMAL, width=120, height=80, cell_count=300))


class TestGroundTruth:
    def test_normal_grade_has_aligned_small_nuclei(self):
        s = generate(SynthSpec(grade=Grade.NORMAL, seed=2, membrane_waviness=0.0))
        assert not any(g.dysplastic for g in s.cells)
        from cadas.features import polarity_angle_deg

        angles = [polarity_angle_deg(g.cell, s.annotation) for g in s.cells]
        assert max(angles) <= 15.0

    def test_deterministic_bit_identical(self):
        a = generate(SynthSpec(grade=Grade.CIN1, seed=9))
        b = generate(SynthSpec(grade=Grade.CIN1, seed=9))
        assert np.array_equal(a.image.pixels, b.image.pixels)
        assert a.cells == b.cells
        assert a.annotation == b.annotation

    def test_cin3_upper_band_enlargement(self):
        normal_areas, cin3_areas = [], []
        for seed in range(4):
            n = generate(SynthSpec(grade=Grade.NORMAL, seed=seed))
            c = generate(SynthSpec(grade=Grade.CIN3, seed=seed + 100))
            normal_areas += [
                math.pi * g.cell.semi_major * g.cell.semi_minor
                for g in n.cells
                if g.depth >= 2 / 3
            ]
            cin3_areas += [
                math.pi * g.cell.semi_major * g.cell.semi_minor
                for g in c.cells
                if g.depth >= 2 / 3
            ]
        assert np.mean(cin3_areas) >= 1.5 * np.mean(normal_areas)

    def test_centers_inside_epithelium_outside_papillae(self, cin2_sample):
        for g in cin2_sample.cells:
            assert region_of_point(g.cell.center, cin2_sample.annotation) is not None
            assert not in_papilla(g.cell.center, cin2_sample.annotation)

    def test_rasterized_area_matches_analytic(self):
        s = generate(SynthSpec(grade=Grade.CIN2, seed=7, overlap_fraction=0.0))
        for g, cell in zip(s.cells, truth_cells_with_pixels(s)):
            analytic = math.pi * g.cell.semi_major * g.cell.semi_minor
            assert abs(cell.pixel_count - analytic) / analytic <= 0.10

    def test_mask_matches_rendered_nuclei(self, cin2_sample):
        px = truth_cells_with_pixels(cin2_sample)
        total = sum(c.pixel_count for c in px)
        assert total == int(cin2_sample.mask.bits.sum())

    def test_expected_upper_ana_monotone_in_grade(self):
        means = []
        for grade in Grade:
            anas = []
            for seed in range(5):
                s = generate(SynthSpec(grade=grade, seed=seed))
                if s.expected["upper"].cell_count:
                    anas.append(s.expected["upper"].ana)
            means.append(np.mean(anas))
        assert means == sorted(means)


class TestPersistence:
    def test_emitted_files_are_consumable(self, tmp_path, cin2_sample):
        paths = write_sample(cin2_sample, tmp_path)
        from cadas.model import SepImage, load_annotation

        img = SepImage.from_file(paths["image"])
        assert np.array_equal(img.pixels, cin2_sample.image.pixels)
        ann = load_annotation(paths["annotation"], width=img.width, height=img.height)
        assert ann == cin2_sample.annotation
        header = paths["truth"].read_text().splitlines()[0]
        assert header.startswith("sep_id,cell_index,cx,cy,a,b,theta")
