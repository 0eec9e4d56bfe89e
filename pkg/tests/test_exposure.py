import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgpssm.errors import DataError, ParameterError
from cgpssm.exposure import Facility, assignments_frame, compute_exposure, read_facilities


def _brute(unit, facilities, buffer):
    num = den = 0.0
    for f in facilities:
        d = ((unit[0] - f.x) ** 2 + (unit[1] - f.y) ** 2) ** 0.5
        if d <= buffer:
            num += f.app * d**-2
            den += d**-2
    return num / den if den else 0.0


def test_single_facility_gives_its_app():
    for dist in (0.3, 1.0, 4.9):
        a = compute_exposure([1], [[0, 0]], [Facility("f", dist, 0, 500)], buffer=5)[0]
        assert (a.zb, a.zc, a.contributing_facility_ids) == (1, 500.0, ("f",))


def test_equidistant_facilities_average():
    fac = [Facility(1, 1, 0, 100), Facility(2, -1, 0, 300)]
    assert compute_exposure([1], [[0, 0]], fac, 5)[0].zc == 200.0


def test_hand_computed_weighted_average():
    fac = [Facility(1, 1, 0, 100), Facility(2, 0, 2, 400)]
    a = compute_exposure([1], [[0, 0]], fac, 5)[0]
    assert a.zc == (100 * 1 + 400 * 0.25) / (1 + 0.25) == 160.0
    assert a.zc == pytest.approx(_brute((0, 0), fac, 5), rel=1e-15)


def test_outside_buffer_unexposed():
    a = compute_exposure(["u"], [[0, 0]], [Facility(1, 10, 0, 100)], 5)[0]
    assert (a.zb, a.zc, a.contributing_facility_ids) == (0, 0.0, ())


def test_coincident_facility_is_an_error():
    with pytest.raises(DataError, match="'f9'.*'u3'"):
        compute_exposure(["u3"], [[1, 1]], [Facility("f9", 1, 1, 10)], 5)


def test_distance_scale_converts_units():
    fac = [Facility(1, 0.04, 0, 100)]
    # 0.04 coordinate units at 100 km per unit is 4 km: inside a 5 km buffer
    assert compute_exposure([1], [[0, 0]], fac, 5, distance_scale=100)[0].zb == 1
    assert compute_exposure([1], [[0, 0]], fac, 5, distance_scale=200)[0].zb == 0


def test_invalid_inputs():
    with pytest.raises(ParameterError):
        compute_exposure([1], [[0, 0]], [], 0)
    with pytest.raises((ParameterError, DataError)):
        Facility(1, 0, 0, 0)


facility_lists = st.lists(
    st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(1, 1000)), min_size=1, max_size=8
)


@given(facility_lists, st.floats(0.1, 5))
@settings(max_examples=150, deadline=None)
def test_convex_combination_and_brute_force(facs, buffer):
    fac = [Facility(i, x, y, app) for i, (x, y, app) in enumerate(facs)]
    rng = np.random.default_rng(len(facs))
    units = rng.uniform(-3, 3, (10, 2))
    units = units[[min(np.hypot(u[0] - f.x, u[1] - f.y) for f in fac) > 1e-6 for u in units]]
    out = compute_exposure(list(range(len(units))), units, fac, buffer)
    for u, a in zip(units, out):
        assert a.zc == pytest.approx(_brute(u, fac, buffer), rel=1e-12)
        if a.zb:
            apps = [f.app for f in fac if f.id in a.contributing_facility_ids]
            assert min(apps) - 1e-9 <= a.zc <= max(apps) + 1e-9
        assert (a.zb == 1) == (a.zc > 0)


@given(facility_lists, st.floats(0.2, 5), st.floats(0.1, 0.9))
@settings(max_examples=100, deadline=None)
def test_shrinking_buffer_never_adds_exposure(facs, buffer, shrink):
    fac = [Facility(i, x, y, app) for i, (x, y, app) in enumerate(facs)]
    units = np.random.default_rng(1).uniform(-3, 3, (10, 2))
    units = units[[min(np.hypot(u[0] - f.x, u[1] - f.y) for f in fac) > 1e-6 for u in units]]
    ids = list(range(len(units)))
    big = compute_exposure(ids, units, fac, buffer)
    small = compute_exposure(ids, units, fac, buffer * shrink)
    assert all(s.zb <= b.zb for s, b in zip(small, big))


def test_facility_csv(tmp_path):
    p = tmp_path / "fac.csv"
    p.write_text("id,x,y,app\n1,0.5,0.5,100\n2,0.1,0.2,30\n")
    fac = read_facilities(p)
    assert [f.app for f in fac] == [100, 30]
    frame = assignments_frame(compute_exposure([7, 8], [[0.5, 0.6], [3, 3]], fac, 0.2))
    assert list(frame.columns) == ["unit_id", "zb", "zc"]
    assert frame["zb"].tolist() == [1, 0]
    (tmp_path / "bad.csv").write_text("id,x,app\n1,0,3\n")
    with pytest.raises(DataError):
        read_facilities(tmp_path / "bad.csv")
