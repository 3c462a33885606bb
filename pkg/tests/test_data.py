import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rec
from icbar import data as dio
from icbar.errors import EmptyGridError, ValidationError


class TestRecord:
    def test_non_monotone_times(self):
        with pytest.raises(ValidationError):
            rec(1, [1.0, 0.5], [0.0])

    def test_nonpositive_time(self):
        with pytest.raises(ValidationError):
            rec(1, [0.0, 0.5], [0.0])

    def test_category_exclusive(self):
        with pytest.raises(ValidationError):
            rec(1, [1.0], [0.0], None, 1)  # censored with a cause
        with pytest.raises(ValidationError):
            rec(1, [1.0], [0.0], 1, None)  # event without cause or missing flag
        with pytest.raises(ValidationError):
            rec(1, [1.0], [0.0], 1, 1, True)
        with pytest.raises(ValidationError):
            rec(1, [1.0], [0.0], 2, 1)  # interval index out of range

    def test_covariate_rows(self):
        with pytest.raises(ValidationError):
            rec(1, [1.0, 2.0, 3.0], np.zeros((2, 2)))
        assert rec(1, [1.0, 2.0], np.zeros((2, 3))).time_varying


class TestInterval:
    def test_examples(self):
        assert tuple(dio.build_interval(rec(1, [0.5, 1.2], [0], 2, 1))) == (0.5, 1.2)
        iv = dio.build_interval(rec(1, [0.5, 1.2], [0]))
        assert iv == (1.2, math.inf) and iv.right_censored
        assert tuple(dio.build_interval(rec(1, [0.8], [0], 1, 1))) == (0.0, 0.8)


class TestGrid:
    def test_union_of_endpoints(self):
        g = dio.build_jump_grid([rec(1, [0.5, 1.2], [0], 2, 1), rec(2, [1.2, 2.0], [0], 2, 1)], 1)
        np.testing.assert_array_equal(g.times[0], [0.5, 1.2, 2.0])

    def test_per_risk_filtering(self):
        g = dio.build_jump_grid([rec(1, [0.5, 1.2], [0], 2, 1), rec(2, [0.7, 1.9], [0], 2, 2)], 2)
        np.testing.assert_array_equal(g.times[0], [0.5, 1.2])
        np.testing.assert_array_equal(g.times[1], [0.7, 1.9])

    def test_missing_cause_feeds_all_risks(self):
        g = dio.build_jump_grid([rec(1, [0.3, 0.9], [0], 2, None, True)], 2)
        for k in range(2):
            np.testing.assert_array_equal(g.times[k], [0.3, 0.9])

    def test_zero_excluded(self):
        g = dio.build_jump_grid([rec(1, [0.8], [0], 1, 1)], 1)
        np.testing.assert_array_equal(g.times[0], [0.8])

    def test_empty(self):
        with pytest.raises(EmptyGridError):
            dio.build_jump_grid([rec(1, [0.8], [0])], 2)

    def test_cause_out_of_range(self):
        with pytest.raises(ValidationError):
            dio.build_jump_grid([rec(1, [0.8], [0], 1, 3)], 2)

    def test_index_sets(self):
        ds = [rec(1, [0.5, 1.2], [0], 2, 1), rec(2, [1.2, 2.0], [0], 2, 1), rec(3, [0.6, 1.5], [0])]
        g = dio.build_jump_grid(ds, 1)
        assert list(g.in_interval(0, 0)) == [1]
        assert list(g.below_left(0, 0)) == [0]
        assert list(g.in_interval(0, 2)) == []
        assert list(g.below_left(0, 2)) == [0, 1]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.05, 3.0), st.floats(0.05, 2.0), st.integers(0, 3)), min_size=1, max_size=15),
           st.randoms())
    def test_grid_properties(self, rows, rnd):
        ds = []
        for i, (u1, gap, kind) in enumerate(rows):
            exams = [u1, u1 + gap]
            if kind == 0:
                ds.append(rec(i, exams, [0.0]))
            elif kind == 3:
                ds.append(rec(i, exams, [0.0], 1 + i % 2, None, True))
            else:
                ds.append(rec(i, exams, [0.0], 1 + i % 2, kind))
        if not any(s.event_observed for s in ds):
            return
        g = dio.build_jump_grid(ds, 2)
        shuffled = list(ds)
        rnd.shuffle(shuffled)
        g2 = dio.build_jump_grid(shuffled, 2)
        for k in range(2):
            t = g.times[k]
            assert np.all(np.diff(t) > 0) and np.all(t > 0)
            np.testing.assert_array_equal(t, g2.times[k])
            np.testing.assert_array_equal(t, dio.build_jump_grid(ds, 2).times[k])
        for i, s in enumerate(ds):
            iv = dio.build_interval(s)
            for k in range(2):
                inside = [j for j in range(g.times[k].size) if iv.left < g.times[k][j] <= iv.right]
                assert list(g.in_interval(k, i)) == (inside if s.event_observed else [])
                if s.event_observed and (s.cause_missing or s.cause == k + 1):
                    assert inside  # the right endpoint is always a grid point


class TestCovariateAt:
    def test_constant(self):
        s = rec(1, [0.5, 1.0], [1.0, -0.5])
        for t in (0.1, 0.7, 5.0):
            np.testing.assert_array_equal(dio.covariate_at(s, t), [1.0, -0.5])

    def test_left_continuous(self):
        s = rec(1, [1.0, 2.0], [[1.0], [2.0]])
        assert dio.covariate_at(s, 1.0)[0] == 1.0
        assert dio.covariate_at(s, 1.0 + 1e-9)[0] == 2.0
        assert dio.covariate_at(s, 0.3)[0] == 1.0
        assert dio.covariate_at(s, 9.0)[0] == 2.0

    @given(st.floats(0.01, 10.0))
    def test_piecewise_constant(self, t):
        s = rec(1, [1.0, 2.0, 3.0], [[1.0], [2.0], [3.0]])
        expected = 1.0 if t <= 1 else 2.0 if t <= 2 else 3.0
        assert dio.covariate_at(s, t)[0] == expected


CSV = """id,n_exams,U1,U2,event,event_j,cause,z1,z2
a,2,0.5,1.2,1,2,1,0.1,0.2
b,1,0.8,,1,1,0,0.3,0.4
c,2,0.4,1.1,0,,,0.5,0.6
"""


class TestLoad:
    def test_well_formed(self):
        ds = dio.load_dataset(io.StringIO(CSV))
        assert len(ds) == 3
        assert ds[0].cause == 1 and ds[0].event_interval == 2
        assert ds[1].cause_missing and ds[1].cause is None
        assert not ds[2].event_observed
        np.testing.assert_array_equal(ds[2].covariates[0], [0.5, 0.6])

    def test_tab_separated(self):
        ds = dio.load_dataset(io.StringIO(CSV.replace(",", "\t")))
        assert len(ds) == 3 and ds[1].cause_missing

    def test_interval_layout_inf(self):
        text = "id,L,R,event,cause,z1\n1,0.5,1.0,1,2,0.1\n2,1.5,inf,0,,0.2\n3,0,0.7,1,1,0.3\n"
        ds = dio.load_dataset(io.StringIO(text))
        assert not ds[1].event_observed
        assert dio.build_interval(ds[1]) == (1.5, math.inf)
        assert tuple(dio.build_interval(ds[0])) == (0.5, 1.0)
        assert tuple(dio.build_interval(ds[2])) == (0.0, 0.7)

    def test_decreasing_times_row_number(self):
        bad = CSV.replace("c,2,0.4,1.1", "c,2,1.4,1.1")
        with pytest.raises(ValidationError) as info:
            dio.load_dataset(io.StringIO(bad))
        assert info.value.row == 3 and "row 3" in str(info.value)

    def test_non_numeric(self):
        with pytest.raises(ValidationError, match="row 1"):
            dio.load_dataset(io.StringIO(CSV.replace("0.1,0.2", "x,0.2")))

    def test_schema_mismatch(self):
        with pytest.raises(ValidationError):
            dio.load_dataset(io.StringIO("id,foo\n1,2\n"))

    def test_schema_mapping(self):
        text = CSV.replace("id,", "subject,")
        ds = dio.load_dataset(io.StringIO(text), schema={"id": "subject"})
        assert ds[0].id == "a"

    def test_companion(self):
        comp = "id,exam_index,z1,z2\na,2,9.0,8.0\n"
        ds = dio.load_dataset(io.StringIO(CSV), companion=io.StringIO(comp))
        assert ds[0].time_varying
        np.testing.assert_array_equal(ds[0].covariates, [[0.1, 0.2], [9.0, 8.0]])
        assert not ds[1].time_varying

    def test_round_trip(self, tmp_path):
        ds = dio.load_dataset(io.StringIO(CSV), companion=io.StringIO("id,exam_index,z1,z2\na,2,9.0,8.0\n"))
        main, comp = tmp_path / "d.csv", tmp_path / "c.csv"
        dio.write_dataset(ds, str(main))
        dio.write_companion(ds, str(comp))
        back = dio.load_dataset(str(main), companion=str(comp))
        for a, b in zip(ds, back):
            assert a.id == b.id and a.event_interval == b.event_interval and a.cause == b.cause
            assert a.cause_missing == b.cause_missing
            np.testing.assert_array_equal(a.exam_times, b.exam_times)
            np.testing.assert_array_equal(a.covariates, b.covariates)
