"""Seeded synthetic data: section traversals and raw AVL traces with known truth.

Travel time on a section is built as::

    running = base(length, land use) * time_of_day * day_of_week
              * exp(congestion(t)) * exp(noise)
    travel  = running + dwell at the start stop + signal wait

``congestion`` is an Ornstein-Uhlenbeck process sampled on a one-minute grid
(part shared by all sections, part per section), so buses a few minutes apart
see similar traffic while the forest, which only knows calendar features,
cannot anticipate it.

The signal wait on a signalized section has two parts: a cycle-phase wait,
uniform on ``[0, delay]`` and independent between buses, and a queue delay
``0.5 * delay * exp(queue_gain * congestion(t))`` that follows the traffic,
where ``delay`` is the section's configured average intersection delay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from busarrival.avl import AvlPoint, SectionTraversal, make_traversal
from busarrival.geo import haversine_m
from busarrival.route import LandUsePattern, Route

FREE_SPEED_MPS = {
    LandUsePattern.CBD: 5.5,
    LandUsePattern.IC: 7.0,
    LandUsePattern.ISU: 8.5,
    LandUsePattern.OSU: 10.0,
}


@dataclass(frozen=True)
class SyntheticParams:
    start: datetime = datetime(2021, 3, 1)
    n_trips: int = 600
    trips_per_day: int = 30
    first_departure_h: float = 6.5
    headway_min: float = 24.0
    headway_jitter_min: float = 3.0
    congestion_sd: float = 0.30
    congestion_tau_min: float = 120.0
    shared_fraction: float = 0.5
    noise_sd: float = 0.06
    dwell_min_s: float = 5.0
    dwell_mean_extra_s: float = 12.0
    queue_gain: float = 2.0
    vehicles: tuple[str, ...] = ("KA-06-F-0831", "KA-06-F-0832", "KA-06-F-0833",
                                 "KA-06-F-0834", "KA-06-F-0835", "KA-06-F-0836")
    seed: int = 2021


def time_of_day_factor(hour: float) -> float:
    """Morning and evening peaks on top of free flow."""
    return (1.0 + 0.35 * math.exp(-((hour - 9.0) / 1.2) ** 2)
            + 0.45 * math.exp(-((hour - 18.0) / 1.5) ** 2))


def day_of_week_factor(dow: int) -> float:
    return {5: 0.9, 6: 0.8}.get(dow, 1.0)


def _ou_grid(rng, n: int, tau_min: float, sd: float) -> np.ndarray:
    phi = math.exp(-1.0 / tau_min)
    step_sd = sd * math.sqrt(1.0 - phi * phi)
    eps = rng.standard_normal(n)
    out = np.empty(n)
    out[0] = sd * eps[0]
    for k in range(1, n):
        out[k] = phi * out[k - 1] + step_sd * eps[k]
    return out


@dataclass
class TripPlan:
    """Ground-truth timing of one run; all durations in whole seconds."""

    trip_id: str
    vehicle_id: str
    depart: datetime
    running_s: list[int]
    dwell_s: list[int]  # dwell at the start stop of each section (first is 0)
    signal_wait_s: list[int]
    direction: str = "up"
    layover_before_s: int = 60
    layover_after_s: int = 60

    def traversal_times(self) -> list[float]:
        return [r + d + w for r, d, w in zip(self.running_s, self.dwell_s, self.signal_wait_s)]


def generate_plans(route: Route, params: SyntheticParams = SyntheticParams()) -> list[TripPlan]:
    rng = np.random.default_rng(params.seed)
    n_days = math.ceil(params.n_trips / params.trips_per_day)
    minutes = (n_days + 1) * 1440
    sd = params.congestion_sd
    shared = _ou_grid(rng, minutes, params.congestion_tau_min, sd * math.sqrt(params.shared_fraction))
    local = [_ou_grid(rng, minutes, params.congestion_tau_min, sd * math.sqrt(1 - params.shared_fraction))
             for _ in route]
    plans = []
    for k in range(params.n_trips):
        day, slot = divmod(k, params.trips_per_day)
        offset_min = (params.first_departure_h * 60 + slot * params.headway_min
                      + rng.uniform(-params.headway_jitter_min, params.headway_jitter_min))
        depart = params.start + timedelta(days=day, seconds=round(offset_min * 60))
        vehicle = params.vehicles[k % len(params.vehicles)]
        running, dwell, wait = [], [], []
        clock = depart
        for sec in route:
            j = sec.section_id - 1
            minute = int((clock - params.start).total_seconds() // 60)
            hour = clock.hour + clock.minute / 60.0
            base = sec.length_m / FREE_SPEED_MPS[sec.lup]
            factor = (time_of_day_factor(hour) * day_of_week_factor(clock.weekday())
                      * math.exp(shared[minute] + local[j][minute] + params.noise_sd * rng.standard_normal()))
            r = max(1, round(base * factor))
            d = 0 if j == 0 else round(params.dwell_min_s + rng.exponential(params.dwell_mean_extra_s))
            w = 0
            if sec.has_signalized_intersection:
                delay = sec.intersection_delay_s
                queue = 0.5 * delay * math.exp(params.queue_gain * (shared[minute] + local[j][minute]))
                w = round(rng.uniform(0, delay) + queue)
            running.append(r)
            dwell.append(d)
            wait.append(w)
            clock += timedelta(seconds=r + d + w)
        plans.append(TripPlan(f"{vehicle}_{depart:%Y%m%dT%H%M%S}_up", vehicle, depart, running, dwell, wait))
    return plans


def plan_traversals(plan: TripPlan, route: Route) -> list[SectionTraversal]:
    out = []
    clock = plan.depart
    for sec, travel, dwell in zip(route, plan.traversal_times(), plan.dwell_s):
        out.append(make_traversal(plan.trip_id, plan.vehicle_id, sec, clock, float(travel), float(dwell)))
        clock += timedelta(seconds=travel)
    return out


def generate_traversals(route: Route, params: SyntheticParams = SyntheticParams()) -> list[SectionTraversal]:
    """Section-level records for ``params.n_trips`` trips, sorted by start time."""
    out = []
    for plan in generate_plans(route, params):
        out.extend(plan_traversals(plan, route))
    out.sort(key=lambda t: (t.section_start_time, t.trip_id, t.section_id))
    return out


# --------------------------------------------------------------------------
# raw AVL traces


@dataclass
class _Leg:
    t0: float
    t1: float
    a: tuple[float, float]
    b: tuple[float, float]
    moving: bool


@dataclass
class SimulatedRun:
    plan: TripPlan
    points: list[AvlPoint] = field(default_factory=list)
    # true geofence passages: origin exit, then entry into every later stop
    passages: list[datetime] = field(default_factory=list)


def _legs(plan: TripPlan, route: Route, radius: float):
    stops = route.stops if plan.direction == "up" else route.stops[::-1]
    coords = [(s.latitude, s.longitude) for s in stops]
    legs, t = [], 0.0
    passages = []
    if plan.layover_before_s:
        legs.append(_Leg(-plan.layover_before_s, 0.0, coords[0], coords[0], False))
    for j in range(len(coords) - 1):
        a, b = coords[j], coords[j + 1]
        if j > 0 and plan.dwell_s[j]:
            legs.append(_Leg(t, t + plan.dwell_s[j], a, a, False))
            t += plan.dwell_s[j]
        dist = haversine_m(*a, *b)
        run = plan.running_s[j]
        speed = dist / run
        if j == 0:
            passages.append(t + radius / speed)
        wait = plan.signal_wait_s[j]
        if wait:
            m = (a[0] + 0.6 * (b[0] - a[0]), a[1] + 0.6 * (b[1] - a[1]))
            legs.append(_Leg(t, t + 0.6 * run, a, m, True))
            legs.append(_Leg(t + 0.6 * run, t + 0.6 * run + wait, m, m, False))
            legs.append(_Leg(t + 0.6 * run + wait, t + run + wait, m, b, True))
            t += run + wait
        else:
            legs.append(_Leg(t, t + run, a, b, True))
            t += run
        passages.append(t - radius / speed)
    if plan.layover_after_s:
        legs.append(_Leg(t, t + plan.layover_after_s, coords[-1], coords[-1], False))
    return legs, passages


def simulate_run(plan: TripPlan, route: Route, sample_s: int = 10, radius: float = 30.0,
                 event_samples: bool = True, odometer_km: float = 6121.51, rng=None) -> SimulatedRun:
    """Sample a bus following ``plan`` along straight chords between stops.

    Samples fall every ``sample_s`` seconds; with ``event_samples`` the device
    also reports at every stop/start of motion, as the irregular rows of real
    AVL logs do. ``rng`` adds up to ``sample_s // 2`` seconds of jitter.
    """
    legs, passages = _legs(plan, route, radius)
    start, end = legs[0].t0, legs[-1].t1
    times = set(range(math.ceil(start), math.floor(end) + 1, sample_s))
    if rng is not None:
        times = {min(end, t + int(rng.integers(0, max(1, sample_s // 2)))) for t in times}
    if event_samples:
        for leg in legs:
            times.update((round(leg.t0), round(leg.t1)))
    run = SimulatedRun(plan)
    odo = odometer_km * 1000.0
    prev = None
    for t in sorted(times):
        stationary = any(not leg.moving and leg.t0 <= t <= leg.t1 for leg in legs)
        leg = next((lg for lg in legs if lg.t0 <= t <= lg.t1), legs[-1])
        f = 0.0 if leg.t1 == leg.t0 else (t - leg.t0) / (leg.t1 - leg.t0)
        lat = leg.a[0] + f * (leg.b[0] - leg.a[0])
        lon = leg.a[1] + f * (leg.b[1] - leg.a[1])
        speed = 0.0 if stationary else 3.6 * haversine_m(*leg.a, *leg.b) / (leg.t1 - leg.t0)
        if prev is not None:
            odo += haversine_m(prev[0], prev[1], lat, lon)
        prev = (lat, lon)
        run.points.append(AvlPoint(plan.vehicle_id, plan.depart + timedelta(seconds=t), lat, lon,
                                   round(odo / 1000.0, 2), round(speed, 1)))
    run.passages = [plan.depart + timedelta(seconds=p) for p in passages]
    return run


def simulate_fleet(route: Route, plans: list[TripPlan], **kwargs) -> list[SimulatedRun]:
    """Simulate runs in order; consecutive runs of one vehicle keep a running odometer."""
    odo = {}
    runs = []
    for plan in sorted(plans, key=lambda p: (p.vehicle_id, p.depart)):
        run = simulate_run(plan, route, odometer_km=odo.get(plan.vehicle_id, 6121.51), **kwargs)
        odo[plan.vehicle_id] = run.points[-1].odometer_km + 0.5
        runs.append(run)
    return runs
