import pytest

from busarrival.route import (BusStop, LandUsePattern, Route, RouteConfigError, RouteSection, SpatialClass,
                              dump_route, load_route, spatial_class, tumakuru_route)

SINGLE = """
format_version: 1
route_id: ONE
sections:
  - section_id: 1
    start_stop: {stop_id: 1, name: A, latitude: 13.0, longitude: 77.0}
    end_stop: {stop_id: 2, name: B, latitude: 13.0009, longitude: 77.0}
    length_m: 100
    lup: CBD
    signalized_intersection: false
    intersection_delay_s: 0
    dwell_time_s: 0
"""


def test_bundled_route_length_and_order(route):
    assert len(route) == 9
    assert [s.length_m for s in route] == [600, 450, 750, 650, 550, 1000, 350, 400, 2200]
    assert route.length_m == 6950
    assert [s.section_id for s in route] == list(range(1, 10))


def test_signalized_sections_are_exactly_2_3_5_7(route):
    sis = {s.section_id for s in route if spatial_class(s) is SpatialClass.SIS}
    assert sis == {2, 3, 5, 7}
    assert spatial_class(route.section(1)) is SpatialClass.NS
    assert spatial_class(route.section(2)) is SpatialClass.SIS


def test_bundled_delays(route):
    delays = {s.section_id: s.intersection_delay_s for s in route if s.has_signalized_intersection}
    assert delays == {2: 47, 3: 45, 5: 57, 7: 20}
    assert all(s.dwell_time_s == 0 for s in route)


def test_stops_chain(route):
    for prev, cur in zip(route.sections, route.sections[1:]):
        assert prev.end_stop == cur.start_stop
    assert len({s.stop_id for s in route.stops}) == 10


def test_single_section_route():
    r = load_route(SINGLE)
    assert r.length_m == 100
    assert r.section(1).lup is LandUsePattern.CBD
    assert r.section(1).spatial_class is SpatialClass.NS


def test_round_trip_is_identity(route):
    assert load_route(dump_route(route)) == route
    assert dump_route(load_route(dump_route(route))) == dump_route(route)


def test_non_contiguous_sections_rejected():
    doc = SINGLE + """
  - section_id: 3
    start_stop: {stop_id: 2, name: B, latitude: 13.0009, longitude: 77.0}
    end_stop: {stop_id: 3, name: C, latitude: 13.0018, longitude: 77.0}
    length_m: 100
    lup: IC
    signalized_intersection: false
    intersection_delay_s: 0
    dwell_time_s: 0
"""
    with pytest.raises(RouteConfigError, match="non-contiguous"):
        load_route(doc)


def test_unknown_lup_rejected():
    with pytest.raises(RouteConfigError, match="LUP"):
        load_route(SINGLE.replace("lup: CBD", "lup: SUBURB"))


def test_delay_without_signal_rejected():
    with pytest.raises(RouteConfigError):
        load_route(SINGLE.replace("intersection_delay_s: 0", "intersection_delay_s: 30"))


@pytest.mark.parametrize("text", ["", "- 1\n- 2\n", "format_version: 2\nsections: []\n", "sections: [\n"])
def test_malformed_documents(text):
    with pytest.raises(RouteConfigError):
        load_route(text)


def test_missing_field_reported():
    with pytest.raises(RouteConfigError, match="length_m"):
        load_route(SINGLE.replace("    length_m: 100\n", ""))


def test_stop_coordinates_validated():
    with pytest.raises(ValueError):
        BusStop(1, "bad", 91.0, 0.0)
    with pytest.raises(ValueError):
        BusStop(1, "bad", 0.0, -181.0)


def test_section_length_must_be_positive():
    a, b = BusStop(1, "A", 0, 0), BusStop(2, "B", 0, 0.001)
    with pytest.raises(ValueError):
        RouteSection(1, a, b, 0.0, LandUsePattern.OSU, False, 0.0)


def test_lup_codes_are_stable():
    assert [lup.code for lup in LandUsePattern] == [0, 1, 2, 3]
    assert LandUsePattern.parse(" isu ") is LandUsePattern.ISU
    assert LandUsePattern.from_code(3) is LandUsePattern.OSU


def test_with_dwell_times_only_touches_given_sections(route):
    r = route.with_dwell_times({2: 12.5})
    assert r.section(2).dwell_time_s == 12.5
    assert r.section(3).dwell_time_s == 0
    assert tumakuru_route().section(2).dwell_time_s == 0


def test_section_lookup_out_of_range(route):
    with pytest.raises(KeyError):
        route.section(10)


def test_bounding_box_contains_all_stops(route):
    lat0, lon0, lat1, lon1 = route.bounding_box(500.0)
    for s in route.stops:
        assert lat0 < s.latitude < lat1 and lon0 < s.longitude < lon1


def test_empty_route_rejected():
    with pytest.raises(RouteConfigError):
        Route("X", ())
