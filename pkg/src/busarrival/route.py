"""Static route topology: stops, sections and their per-section constants.

A route is loaded from a YAML document with one record per section::

    format_version: 1
    route_id: TBS-KY
    sections:
      - section_id: 1
        start_stop: {stop_id: 1, name: "Tumkur Bus Stand", latitude: 13.34286, longitude: 77.09886}
        end_stop: {stop_id: 2, name: "CallTax Circle", latitude: 13.3376479, longitude: 77.1002953}
        length_m: 600.0
        lup: CBD                      # one of CBD, IC, ISU, OSU
        signalized_intersection: false
        intersection_delay_s: 0.0     # average signal delay; must be 0 without a signal
        dwell_time_s: 0.0             # standard dwell at the section's start stop

Sections must be numbered 1..N in travel order and chain stop to stop.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from importlib import resources
from typing import Iterator

import yaml

from busarrival.geo import offset_latlon

FORMAT_VERSION = 1


class RouteConfigError(ValueError):
    """Raised when a route document is malformed or violates an invariant."""


class LandUsePattern(enum.Enum):
    CBD = "CBD"  # central business district
    IC = "IC"  # inner city
    ISU = "ISU"  # inner suburban
    OSU = "OSU"  # outer suburban

    @property
    def code(self) -> int:
        return _LUP_CODES[self]

    @classmethod
    def parse(cls, token) -> "LandUsePattern":
        try:
            return cls(str(token).strip().upper())
        except ValueError:
            raise RouteConfigError(f"unknown LUP token {token!r}") from None

    @classmethod
    def from_code(cls, code: int) -> "LandUsePattern":
        return list(cls)[code]


_LUP_CODES = {lup: i for i, lup in enumerate(LandUsePattern)}


class SpatialClass(enum.Enum):
    NS = "NS"  # normal section, no signalized intersection
    SIS = "SIS"  # section with a signalized intersection


@dataclass(frozen=True)
class BusStop:
    stop_id: int
    name: str
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise RouteConfigError(f"stop {self.stop_id}: latitude {self.latitude} out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise RouteConfigError(f"stop {self.stop_id}: longitude {self.longitude} out of range")


@dataclass(frozen=True)
class RouteSection:
    section_id: int
    start_stop: BusStop
    end_stop: BusStop
    length_m: float
    lup: LandUsePattern
    has_signalized_intersection: bool = False
    intersection_delay_s: float = 0.0
    dwell_time_s: float = 0.0

    def __post_init__(self):
        if not self.length_m > 0:
            raise RouteConfigError(f"section {self.section_id}: length must be positive")
        if self.intersection_delay_s < 0 or self.dwell_time_s < 0:
            raise RouteConfigError(f"section {self.section_id}: negative delay or dwell")
        if self.intersection_delay_s > 0 and not self.has_signalized_intersection:
            raise RouteConfigError(
                f"section {self.section_id}: intersection delay on a section without a signal"
            )

    @property
    def spatial_class(self) -> SpatialClass:
        return spatial_class(self)


def spatial_class(section: RouteSection) -> SpatialClass:
    return SpatialClass.SIS if section.has_signalized_intersection else SpatialClass.NS


@dataclass(frozen=True)
class Route:
    route_id: str
    sections: tuple[RouteSection, ...]

    def __post_init__(self):
        if not self.sections:
            raise RouteConfigError("route has no sections")
        for expected, sec in enumerate(self.sections, start=1):
            if sec.section_id != expected:
                raise RouteConfigError(
                    f"non-contiguous section ids: expected {expected}, got {sec.section_id}"
                )
        for prev, sec in zip(self.sections, self.sections[1:]):
            if sec.start_stop != prev.end_stop:
                raise RouteConfigError(
                    f"section {sec.section_id} does not start where section {prev.section_id} ends"
                )
        ids = [s.stop_id for s in self.stops]
        if len(set(ids)) != len(ids):
            raise RouteConfigError("duplicate stop_id on route")

    def __iter__(self) -> Iterator[RouteSection]:
        return iter(self.sections)

    def __len__(self) -> int:
        return len(self.sections)

    def section(self, section_id: int) -> RouteSection:
        if not 1 <= section_id <= len(self.sections):
            raise KeyError(f"no section {section_id} on route {self.route_id}")
        return self.sections[section_id - 1]

    @property
    def stops(self) -> list[BusStop]:
        return [self.sections[0].start_stop] + [s.end_stop for s in self.sections]

    @property
    def length_m(self) -> float:
        return sum(s.length_m for s in self.sections)

    def bounding_box(self, pad_m: float = 0.0) -> tuple[float, float, float, float]:
        """(min_lat, min_lon, max_lat, max_lon) of all stops, padded by ``pad_m``."""
        lats = [s.latitude for s in self.stops]
        lons = [s.longitude for s in self.stops]
        # widest longitude pad sits at the latitude furthest from the equator
        dlat, dlon = offset_latlon(max(map(abs, lats)), 0.0, pad_m)
        return min(lats) - dlat, min(lons) - dlon, max(lats) + dlat, max(lons) + dlon

    def with_dwell_times(self, dwell: dict[int, float]) -> "Route":
        """Copy of the route with ``dwell_time_s`` replaced for the given section ids."""
        secs = tuple(
            replace(s, dwell_time_s=float(dwell[s.section_id])) if s.section_id in dwell else s
            for s in self.sections
        )
        return Route(self.route_id, secs)


def _stop(doc) -> BusStop:
    try:
        return BusStop(
            stop_id=int(doc["stop_id"]),
            name=str(doc.get("name", "")),
            latitude=float(doc["latitude"]),
            longitude=float(doc["longitude"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, RouteConfigError):
            raise
        raise RouteConfigError(f"malformed stop record {doc!r}") from exc


def _section(doc) -> RouteSection:
    if not isinstance(doc, dict):
        raise RouteConfigError(f"malformed section record {doc!r}")
    try:
        flag = doc.get("signalized_intersection", False)
        if not isinstance(flag, bool):
            raise RouteConfigError(f"signalized_intersection must be true/false, got {flag!r}")
        return RouteSection(
            section_id=int(doc["section_id"]),
            start_stop=_stop(doc["start_stop"]),
            end_stop=_stop(doc["end_stop"]),
            length_m=float(doc["length_m"]),
            lup=LandUsePattern.parse(doc["lup"]),
            has_signalized_intersection=flag,
            intersection_delay_s=float(doc.get("intersection_delay_s", 0.0)),
            dwell_time_s=float(doc.get("dwell_time_s", 0.0)),
        )
    except KeyError as exc:
        raise RouteConfigError(f"section record missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, RouteConfigError):
            raise
        raise RouteConfigError(f"malformed section record: {exc}") from exc


def load_route(config_text: str) -> Route:
    """Parse a route document. Raises :class:`RouteConfigError` on any defect."""
    try:
        doc = yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        raise RouteConfigError(f"malformed route document: {exc}") from exc
    if not isinstance(doc, dict):
        raise RouteConfigError("malformed route document: expected a mapping")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise RouteConfigError(f"unsupported format_version {version!r}")
    sections = doc.get("sections")
    if not isinstance(sections, list):
        raise RouteConfigError("malformed route document: 'sections' must be a list")
    return Route(str(doc.get("route_id", "route")), tuple(_section(s) for s in sections))


def load_route_file(path) -> Route:
    with open(path, encoding="utf-8") as fh:
        return load_route(fh.read())


def dump_route(route: Route) -> str:
    """Serialize a route back to the YAML document format."""

    def stop(s: BusStop):
        return {"stop_id": s.stop_id, "name": s.name, "latitude": s.latitude, "longitude": s.longitude}

    doc = {
        "format_version": FORMAT_VERSION,
        "route_id": route.route_id,
        "sections": [
            {
                "section_id": s.section_id,
                "start_stop": stop(s.start_stop),
                "end_stop": stop(s.end_stop),
                "length_m": s.length_m,
                "lup": s.lup.value,
                "signalized_intersection": s.has_signalized_intersection,
                "intersection_delay_s": s.intersection_delay_s,
                "dwell_time_s": s.dwell_time_s,
            }
            for s in route.sections
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


def tumakuru_route() -> Route:
    """The nine-section Tumkur Bus Stand to Kyathasandra route shipped with the package."""
    text = resources.files("busarrival").joinpath("data/tumakuru_route.yaml").read_text("utf-8")
    return load_route(text)
