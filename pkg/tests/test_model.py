import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadas.model import (
    AnnotationGeometryError,
    AnnotationSyntaxError,
    EpithelialRegion,
    Grade,
    MembraneAnnotation,
    ModelError,
    Papilla,
    SepImage,
    SilGrade,
    in_papilla,
    parse_annotation,
    region_map,
    region_of_point,
)

MINIMAL = json.dumps(
    {"basal": [[0, 100], [500, 100]], "upper": [[0, 10], [500, 10]], "papillae": []}
)


class TestParse:
    def test_minimal_annotation(self):
        a = parse_annotation(MINIMAL)
        assert a.basal == ((0.0, 100.0), (500.0, 100.0))
        assert a.upper == ((0.0, 10.0), (500.0, 10.0))
        assert a.papillae == ()

    def test_single_point_polyline_rejected(self):
        text = json.dumps({"basal": [[0, 100]], "upper": [[0, 10], [500, 10]]})
        with pytest.raises(AnnotationGeometryError, match="basal"):
            parse_annotation(text)

    def test_malformed_json_names_line(self):
        with pytest.raises(AnnotationSyntaxError, match="line 2"):
            parse_annotation('{"basal": [[0, 1], [2, 3]],\n "upper": }')

    def test_nonpositive_radius(self):
        text = json.dumps(
            {
                "basal": [[0, 100], [500, 100]],
                "upper": [[0, 10], [500, 10]],
                "papillae": [{"cx": 10, "cy": 50, "r": 0}],
            }
        )
        with pytest.raises(AnnotationGeometryError, match=r"papillae\[0\]"):
            parse_annotation(text)

    def test_out_of_bounds_point(self):
        with pytest.raises(AnnotationGeometryError, match=r"basal\[1\]"):
            parse_annotation(MINIMAL, width=400, height=200)

    def test_in_bounds_ok(self):
        parse_annotation(MINIMAL, width=501, height=200)

    def test_intersecting_membranes_rejected(self):
        with pytest.raises(AnnotationGeometryError, match="intersect"):
            MembraneAnnotation(
                basal=((0.0, 0.0), (100.0, 100.0)),
                upper=((0.0, 100.0), (100.0, 0.0)),
            )


# random non-crossing annotations: two horizontal-ish polylines well apart
@st.composite
def valid_annotations(draw):
    n_b = draw(st.integers(2, 5))
    n_u = draw(st.integers(2, 5))
    xs_b = sorted(draw(st.lists(st.floats(0, 500), min_size=n_b, max_size=n_b, unique=True)))
    xs_u = sorted(draw(st.lists(st.floats(0, 500), min_size=n_u, max_size=n_u, unique=True)))
    basal = tuple((x, draw(st.floats(120, 160))) for x in xs_b)
    upper = tuple((x, draw(st.floats(10, 50))) for x in xs_u)
    papillae = tuple(
        Papilla(
            cx=draw(st.floats(0, 500)),
            cy=draw(st.floats(60, 110)),
            r=draw(st.floats(1, 30)),
        )
        for _ in range(draw(st.integers(0, 3)))
    )
    return MembraneAnnotation(basal=basal, upper=upper, papillae=papillae)


@given(valid_annotations())
@settings(max_examples=60, deadline=None)
def test_serialize_parse_round_trip(annotation):
    assert parse_annotation(annotation.serialize()) == annotation


class TestRegion:
    def test_on_basal_is_lower(self, strip_annotation):
        assert region_of_point((250.0, 100.0), strip_annotation) is EpithelialRegion.LOWER

    def test_equidistant_is_middle(self, strip_annotation):
        assert region_of_point((250.0, 55.0), strip_annotation) is EpithelialRegion.MIDDLE

    def test_derived_strip_depth(self, strip_annotation):
        # 90 px strip, 70 px above the basal membrane: t = 70/90 = 7/9 >= 2/3
        assert region_of_point((250.0, 30.0), strip_annotation) is EpithelialRegion.UPPER

    def test_outside_returns_none(self, strip_annotation):
        assert region_of_point((250.0, 105.0), strip_annotation) is None
        assert region_of_point((250.0, 5.0), strip_annotation) is None

    def test_exhaustive_between_membranes(self, strip_annotation):
        codes = region_map(strip_annotation, 500, 110)
        interior = codes[11:100, 1:499]  # strictly between the membranes
        assert set(np.unique(interior)) <= {0, 1, 2}
        assert (interior >= 0).all()

    def test_transect_monotone(self, strip_annotation):
        seq = [
            region_of_point((123.0, float(y)), strip_annotation).value
            for y in range(100, 9, -1)
        ]
        assert seq == sorted(seq)
        assert set(seq) == {0, 1, 2}

    @given(st.floats(1, 499), st.floats(10.0, 100.0))
    @settings(max_examples=100, deadline=None)
    def test_thirds_against_direct_formula(self, x, y):
        strip = MembraneAnnotation(
            basal=((0.0, 100.0), (500.0, 100.0)), upper=((0.0, 10.0), (500.0, 10.0))
        )
        t = (100.0 - y) / 90.0
        expected = (
            EpithelialRegion.LOWER
            if t < 1 / 3
            else EpithelialRegion.MIDDLE
            if t < 2 / 3
            else EpithelialRegion.UPPER
        )
        assert region_of_point((x, y), strip) is expected


class TestPapilla:
    def test_center_is_inside(self, strip_annotation):
        a = MembraneAnnotation(
            basal=strip_annotation.basal,
            upper=strip_annotation.upper,
            papillae=(Papilla(100.0, 60.0, 15.0),),
        )
        assert in_papilla((100.0, 60.0), a)

    def test_boundary_is_inside(self, strip_annotation):
        a = MembraneAnnotation(
            basal=strip_annotation.basal,
            upper=strip_annotation.upper,
            papillae=(Papilla(100.0, 60.0, 15.0),),
        )
        assert in_papilla((115.0, 60.0), a)
        assert not in_papilla((115.1, 60.0), a)

    def test_no_papillae_always_false(self, strip_annotation):
        assert not in_papilla((100.0, 60.0), strip_annotation)


class TestSepImage:
    def test_too_small_rejected(self):
        with pytest.raises(ModelError, match="minimum"):
            SepImage(pixels=np.zeros((16, 16, 3), dtype=np.uint8), id="x")

    def test_empty_id_rejected(self):
        with pytest.raises(ModelError, match="id"):
            SepImage(pixels=np.zeros((32, 32, 3), dtype=np.uint8), id="")

    @pytest.mark.parametrize("name", ["img.png", "img.tiff"])
    def test_file_round_trip(self, tmp_path, random_image, name):
        path = tmp_path / name
        random_image.save(path)
        loaded = SepImage.from_file(path)
        assert np.array_equal(loaded.pixels, random_image.pixels)
        assert loaded.id == "img"


class TestGrades:
    def test_orderings(self):
        assert Grade.NORMAL.severity < Grade.CIN1.severity < Grade.CIN2.severity < Grade.CIN3.severity
        assert SilGrade.NORMAL.severity < SilGrade.LSIL.severity < SilGrade.HSIL.severity

    def test_parse(self):
        assert Grade.parse("cin2") is Grade.CIN2
        with pytest.raises(ModelError):
            Grade.parse("CIN4")
