"""Scenario inputs: infrastructure, schedule, activities and observations.

A scenario lives in one YAML document. Observation counts are kept in a
sidecar CSV referenced from the document's ``observations`` key, because
sensor exports are tabular. Lengths are meters, times are seconds from the
scenario start.

Example document::

    horizon: 900
    infrastructure:
      walkable:
        - [[0, 0], [40, 0], [40, 20], [0, 20]]
      obstacles:
        - [[18, 8], [22, 8], [22, 12], [18, 12]]
      portals:
        - {id: E1, segment: [[0, 8], [0, 12]], kind: entrance, attractions: [metro]}
        - {id: P1, segment: [[10, 0], [14, 0]], kind: platform-access}
      decision_points:
        - {id: D1, position: [16, 6]}
    schedule:
      load_factor: 0.8
      events:
        - {mode_id: T1, direction: arrival, time: 60, platform: P1, capacity: 100, expected_load: 40}
    activities:
      - {type: work, location: E1, window: [0, 900]}
    observations: counts.csv
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Literal, Optional, Sequence, Union

import yaml
from shapely.geometry import LineString, Point

from . import geometry as geo
from .geometry import Point2, Ring, Segment

PortalKind = Literal["entrance", "platform-access"]
PORTAL_KINDS = ("entrance", "platform-access")
EVENT_DIRECTIONS = ("arrival", "departure")
COUNT_DIRECTIONS = ("in", "out")
COUNTS_HEADER = ["portal_id", "direction", "t0_s", "t1_s", "count"]
DEFAULT_LOAD_FACTOR = 0.8


class ScenarioError(Exception):
    """Base class for scenario loading problems."""


class ScenarioFormatError(ScenarioError):
    """The document could not be parsed; the message names the line or field."""


class ScenarioValidationError(ScenarioError):
    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("scenario failed validation:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class Portal:
    id: str
    segment: Segment
    kind: PortalKind
    attraction_tags: frozenset[str] = frozenset()

    @property
    def midpoint(self) -> Point2:
        return geo.midpoint(self.segment)

    @property
    def length(self) -> float:
        return geo.segment_length(self.segment)


@dataclass(frozen=True)
class DecisionPoint:
    id: str
    position: Point2


@dataclass(frozen=True)
class Infrastructure:
    walkable: tuple[Ring, ...]
    obstacles: tuple[Ring, ...] = ()
    portals: tuple[Portal, ...] = ()
    decision_points: tuple[DecisionPoint, ...] = ()

    @cached_property
    def walkable_geom(self):
        return geo.union(self.walkable)

    @cached_property
    def obstacle_geoms(self):
        return [geo.to_polygon(r) for r in self.obstacles]

    @cached_property
    def bounds(self) -> tuple[float, float, float, float]:
        return geo.polygon_bounds(self.walkable)

    def portal(self, portal_id: str) -> Portal:
        for p in self.portals:
            if p.id == portal_id:
                return p
        raise KeyError(portal_id)

    @property
    def portal_ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.portals)

    def portals_of_kind(self, kind: PortalKind) -> tuple[Portal, ...]:
        return tuple(p for p in self.portals if p.kind == kind)

    def wall_segments(self) -> list[Segment]:
        """Obstacle edges plus walkable boundary edges with portal gaps removed."""
        cuts = [p.segment for p in self.portals]
        walls: list[Segment] = []
        for ring in self.walkable:
            for edge in geo.ring_edges(ring):
                walls.extend(geo.subtract_intervals(edge, cuts))
        for ring in self.obstacles:
            walls.extend(geo.ring_edges(ring))
        return walls


@dataclass(frozen=True)
class VehicleEvent:
    mode_id: str
    direction: Literal["arrival", "departure"]
    time: float
    platform: str
    capacity: int
    # None only for departures without occupancy data (no boarding target).
    expected_load: Optional[int] = None


@dataclass(frozen=True)
class Schedule:
    events: tuple[VehicleEvent, ...] = ()
    load_factor: float = DEFAULT_LOAD_FACTOR

    def arrivals(self) -> tuple[VehicleEvent, ...]:
        return tuple(e for e in self.events if e.direction == "arrival")

    def departures(self) -> tuple[VehicleEvent, ...]:
        return tuple(e for e in self.events if e.direction == "departure")

    def event(self, mode_id: str) -> VehicleEvent:
        for e in self.events:
            if e.mode_id == mode_id:
                return e
        raise KeyError(mode_id)


@dataclass(frozen=True)
class Activity:
    type: str
    location: Union[str, Point2]
    window: tuple[float, float]


@dataclass(frozen=True)
class ActivitySet:
    activities: tuple[Activity, ...] = ()

    def default_type(self) -> str:
        return self.activities[0].type if self.activities else "work"


@dataclass(frozen=True)
class ObservationRecord:
    portal_id: str
    direction: Literal["in", "out"]
    t0: float
    t1: float
    count: int


@dataclass(frozen=True)
class ObservationSet:
    records: tuple[ObservationRecord, ...] = ()

    def for_portal(self, portal_id: str, direction: str) -> list[ObservationRecord]:
        return [r for r in self.records if r.portal_id == portal_id and r.direction == direction]


@dataclass(frozen=True)
class Scenario:
    infrastructure: Infrastructure
    schedule: Schedule = field(default_factory=Schedule)
    activities: ActivitySet = field(default_factory=ActivitySet)
    observations: Optional[ObservationSet] = None
    horizon: float = 900.0

    def without_observations(self) -> "Scenario":
        return Scenario(self.infrastructure, self.schedule, self.activities, None, self.horizon)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def validate_scenario(s: Scenario) -> list[str]:
    """Return human-readable invariant violations; empty when the scenario is sound."""
    out: list[str] = []
    inf = s.infrastructure

    if not (s.horizon > 0):
        out.append(f"horizon: must be positive, got {s.horizon}")

    if not inf.walkable:
        out.append("infrastructure.walkable: at least one polygon required")
        return out
    for i, ring in enumerate(inf.walkable):
        if len(ring) < 3:
            out.append(f"walkable[{i}]: polygon needs at least 3 vertices")
            continue
        area = geo.signed_area(ring)
        if area <= 0:
            out.append(f"walkable[{i}]: outer ring must be counter-clockwise with positive area")
        elif not geo.to_polygon(ring).is_valid:
            out.append(f"walkable[{i}]: polygon is not simple")
    if out:
        return out

    walk = inf.walkable_geom
    boundary = walk.boundary
    xmin, ymin, xmax, ymax = inf.bounds

    for i, ring in enumerate(inf.obstacles):
        if len(ring) < 3 or abs(geo.signed_area(ring)) <= 0:
            out.append(f"obstacle[{i}]: must have positive area")
            continue
        if not geo.to_polygon(ring).is_valid:
            out.append(f"obstacle[{i}]: polygon is not simple")
        if any(x < xmin or x > xmax or y < ymin or y > ymax for x, y in ring):
            out.append(f"obstacle[{i}]: lies outside the walkable bounding box")

    seen: set[str] = set()
    for p in inf.portals:
        if p.id in seen:
            out.append(f"portal {p.id}: duplicate id")
        seen.add(p.id)
        if p.kind not in PORTAL_KINDS:
            out.append(f"portal {p.id}: unknown kind {p.kind!r}")
        if p.length <= 0:
            out.append(f"portal {p.id}: segment has zero length")
            continue
        if boundary.distance(Point(p.segment[0])) > geo.BOUNDARY_TOL \
                or boundary.distance(Point(p.segment[1])) > geo.BOUNDARY_TOL \
                or not boundary.buffer(geo.BOUNDARY_TOL).covers(LineString(p.segment)):
            out.append(f"portal {p.id}: segment does not lie on the walkable boundary")

    for dp in inf.decision_points:
        if dp.id in seen:
            out.append(f"decision point {dp.id}: id collides with another node")
        seen.add(dp.id)
        pt = Point(dp.position)
        if not walk.contains(pt):
            out.append(f"decision point {dp.id}: not strictly inside the walkable area")
        for i, obs in enumerate(inf.obstacle_geoms):
            if obs.intersects(pt):
                out.append(f"decision point {dp.id}: inside obstacle[{i}]")

    platforms = {p.id for p in inf.portals if p.kind == "platform-access"}
    modes: set[str] = set()
    prev_t = -math.inf
    for k, e in enumerate(s.schedule.events):
        tag = f"event {e.mode_id} (#{k})"
        if e.mode_id in modes:
            out.append(f"{tag}: duplicate mode_id")
        modes.add(e.mode_id)
        if e.direction not in EVENT_DIRECTIONS:
            out.append(f"{tag}: unknown direction {e.direction!r}")
        if e.time < prev_t:
            out.append(f"{tag}: schedule not sorted by time")
        prev_t = max(prev_t, e.time)
        if not (0 <= e.time <= s.horizon):
            out.append(f"{tag}: time {e.time} outside [0, {s.horizon}]")
        if e.platform not in platforms:
            out.append(f"{tag}: platform {e.platform!r} is not a platform-access portal")
        if e.capacity < 0:
            out.append(f"{tag}: negative capacity")
        if e.expected_load is not None and not (0 <= e.expected_load <= e.capacity):
            out.append(f"{tag}: expected_load {e.expected_load} outside [0, capacity={e.capacity}]")
        if e.direction == "arrival" and e.expected_load is None:
            out.append(f"{tag}: arrival without expected_load")

    portal_ids = set(inf.portal_ids)
    for k, a in enumerate(s.activities.activities):
        if isinstance(a.location, str):
            if a.location not in portal_ids:
                out.append(f"activity #{k} ({a.type}): unknown portal {a.location!r}")
        elif not walk.covers(Point(a.location)):
            out.append(f"activity #{k} ({a.type}): location outside the walkable area")
        if a.window[0] > a.window[1]:
            out.append(f"activity #{k} ({a.type}): empty availability window")

    if s.observations is not None:
        spans: dict[tuple[str, str], list[tuple[float, float]]] = {}
        for k, r in enumerate(s.observations.records):
            tag = f"observation #{k} ({r.portal_id},{r.direction})"
            if r.portal_id not in portal_ids:
                out.append(f"{tag}: unknown portal {r.portal_id!r}")
            if r.direction not in COUNT_DIRECTIONS:
                out.append(f"{tag}: direction must be in/out")
            if r.count < 0:
                out.append(f"{tag}: negative count")
            if not (r.t0 < r.t1):
                out.append(f"{tag}: empty interval [{r.t0}, {r.t1})")
            spans.setdefault((r.portal_id, r.direction), []).append((r.t0, r.t1))
        for key, iv in spans.items():
            iv.sort()
            for (a0, a1), (b0, b1) in zip(iv, iv[1:]):
                if b0 < a1:
                    out.append(f"observations {key[0]},{key[1]}: intervals [{a0},{a1}) and [{b0},{b1}) overlap")
    return out


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _num(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioFormatError(f"field {where}: expected a number, got {v!r}")
    return float(v)


def _int(v: Any, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or float(v) != int(v):
        raise ScenarioFormatError(f"field {where}: expected an integer, got {v!r}")
    return int(v)


def _str(v: Any, where: str) -> str:
    if not isinstance(v, (str, int)) or isinstance(v, bool):
        raise ScenarioFormatError(f"field {where}: expected a label, got {v!r}")
    return str(v)


def _point(v: Any, where: str) -> Point2:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ScenarioFormatError(f"field {where}: expected [x, y]")
    return (_num(v[0], f"{where}[0]"), _num(v[1], f"{where}[1]"))


def _ring(v: Any, where: str) -> Ring:
    if not isinstance(v, (list, tuple)):
        raise ScenarioFormatError(f"field {where}: expected a list of [x, y] vertices")
    return tuple(_point(p, f"{where}[{i}]") for i, p in enumerate(v))


def _mapping(v: Any, where: str) -> dict:
    if not isinstance(v, dict):
        raise ScenarioFormatError(f"field {where}: expected a mapping")
    return v


def _require(d: dict, key: str, where: str) -> Any:
    if key not in d:
        raise ScenarioFormatError(f"field {where}.{key}: missing")
    return d[key]


def _parse_infrastructure(d: dict) -> Infrastructure:
    walk = _require(d, "walkable", "infrastructure")
    if not isinstance(walk, list):
        raise ScenarioFormatError("field infrastructure.walkable: expected a list of polygons")
    walkable = tuple(_ring(r, f"infrastructure.walkable[{i}]") for i, r in enumerate(walk))
    obstacles = tuple(_ring(r, f"infrastructure.obstacles[{i}]")
                      for i, r in enumerate(d.get("obstacles") or []))
    portals = []
    for i, p in enumerate(d.get("portals") or []):
        where = f"infrastructure.portals[{i}]"
        p = _mapping(p, where)
        seg = _require(p, "segment", where)
        if not isinstance(seg, list) or len(seg) != 2:
            raise ScenarioFormatError(f"field {where}.segment: expected [[x0, y0], [x1, y1]]")
        kind = _str(_require(p, "kind", where), f"{where}.kind")
        if kind not in PORTAL_KINDS:
            raise ScenarioFormatError(f"field {where}.kind: expected one of {PORTAL_KINDS}, got {kind!r}")
        tags = p.get("attractions") or []
        portals.append(Portal(
            id=_str(_require(p, "id", where), f"{where}.id"),
            segment=(_point(seg[0], f"{where}.segment[0]"), _point(seg[1], f"{where}.segment[1]")),
            kind=kind,
            attraction_tags=frozenset(_str(t, f"{where}.attractions") for t in tags),
        ))
    dps = []
    for i, p in enumerate(d.get("decision_points") or []):
        where = f"infrastructure.decision_points[{i}]"
        p = _mapping(p, where)
        dps.append(DecisionPoint(_str(_require(p, "id", where), f"{where}.id"),
                                 _point(_require(p, "position", where), f"{where}.position")))
    return Infrastructure(walkable, obstacles, tuple(portals), tuple(dps))


def _parse_schedule(d: Optional[dict]) -> Schedule:
    if d is None:
        return Schedule()
    d = _mapping(d, "schedule")
    lf = _num(d.get("load_factor", DEFAULT_LOAD_FACTOR), "schedule.load_factor")
    events = []
    for i, e in enumerate(d.get("events") or []):
        where = f"schedule.events[{i}]"
        e = _mapping(e, where)
        direction = _str(_require(e, "direction", where), f"{where}.direction")
        if direction not in EVENT_DIRECTIONS:
            raise ScenarioFormatError(f"field {where}.direction: expected arrival/departure, got {direction!r}")
        cap = _int(_require(e, "capacity", where), f"{where}.capacity")
        load = e.get("expected_load")
        if load is None:
            load = int(round(cap * lf)) if direction == "arrival" else None
        else:
            load = _int(load, f"{where}.expected_load")
        events.append(VehicleEvent(
            mode_id=_str(_require(e, "mode_id", where), f"{where}.mode_id"),
            direction=direction,
            time=_num(_require(e, "time", where), f"{where}.time"),
            platform=_str(_require(e, "platform", where), f"{where}.platform"),
            capacity=cap,
            expected_load=load,
        ))
    return Schedule(tuple(events), lf)


def _parse_activities(v: Any) -> ActivitySet:
    acts = []
    for i, a in enumerate(v or []):
        where = f"activities[{i}]"
        a = _mapping(a, where)
        loc = _require(a, "location", where)
        loc = _point(loc, f"{where}.location") if isinstance(loc, list) else _str(loc, f"{where}.location")
        w = a.get("window", [0.0, math.inf])
        if not isinstance(w, list) or len(w) != 2:
            raise ScenarioFormatError(f"field {where}.window: expected [t0, t1]")
        acts.append(Activity(_str(_require(a, "type", where), f"{where}.type"), loc,
                             (_num(w[0], f"{where}.window[0]"), _num(w[1], f"{where}.window[1]"))))
    return ActivitySet(tuple(acts))


def parse_counts_csv(text: str, source: str = "<counts>") -> ObservationSet:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ScenarioFormatError(f"{source}: line 1: empty counts file")
    if [h.strip() for h in header] != COUNTS_HEADER:
        raise ScenarioFormatError(f"{source}: line 1: header must be {','.join(COUNTS_HEADER)}")
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise ScenarioFormatError(f"{source}: line {lineno}: expected 5 columns, got {len(row)}")
        pid, direction, t0, t1, count = (c.strip() for c in row)
        if direction not in COUNT_DIRECTIONS:
            raise ScenarioFormatError(f"{source}: line {lineno}: direction must be in/out, got {direction!r}")
        try:
            records.append(ObservationRecord(pid, direction, float(t0), float(t1), int(count)))
        except ValueError as exc:
            raise ScenarioFormatError(f"{source}: line {lineno}: {exc}") from None
    return ObservationSet(tuple(records))


def format_counts_csv(obs: ObservationSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COUNTS_HEADER)
    for r in obs.records:
        w.writerow([r.portal_id, r.direction, _fmt(r.t0), _fmt(r.t1), r.count])
    return buf.getvalue()


def parse_scenario(text: str, base_dir: Path | None = None, source: str = "<scenario>") -> Scenario:
    """Parse a scenario document without validating invariants."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "unknown line"
        raise ScenarioFormatError(f"{source}: {where}: {getattr(exc, 'problem', exc)}") from None
    doc = _mapping(doc, "<document>")
    infra = _parse_infrastructure(_mapping(_require(doc, "infrastructure", "<document>"), "infrastructure"))
    obs = None
    ref = doc.get("observations")
    if ref is not None:
        if isinstance(ref, str):
            path = (base_dir or Path(".")) / ref
            if not path.exists():
                raise FileNotFoundError(f"observations file not found: {path}")
            obs = parse_counts_csv(path.read_text(encoding="utf-8"), str(path))
        else:
            raise ScenarioFormatError("field observations: expected a CSV file name")
    return Scenario(
        infrastructure=infra,
        schedule=_parse_schedule(doc.get("schedule")),
        activities=_parse_activities(doc.get("activities")),
        observations=obs,
        horizon=_num(doc.get("horizon", 900.0), "horizon"),
    )


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario document.

    Raises ``FileNotFoundError`` for a missing file, ``ScenarioFormatError``
    on parse problems and ``ScenarioValidationError`` listing all violations.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    s = parse_scenario(path.read_text(encoding="utf-8"), path.parent, str(path))
    violations = validate_scenario(s)
    if violations:
        raise ScenarioValidationError(violations)
    return s


def _fmt(x: float) -> Union[int, float]:
    return int(x) if float(x).is_integer() else float(x)


def scenario_to_dict(s: Scenario, counts_name: Optional[str] = None) -> dict:
    inf = s.infrastructure
    doc: dict[str, Any] = {"horizon": _fmt(s.horizon)}
    doc["infrastructure"] = {
        "walkable": [[[_fmt(x), _fmt(y)] for x, y in r] for r in inf.walkable],
        "obstacles": [[[_fmt(x), _fmt(y)] for x, y in r] for r in inf.obstacles],
        "portals": [
            {"id": p.id, "segment": [[_fmt(x), _fmt(y)] for x, y in p.segment], "kind": p.kind,
             "attractions": sorted(p.attraction_tags)}
            for p in inf.portals
        ],
        "decision_points": [{"id": d.id, "position": [_fmt(d.position[0]), _fmt(d.position[1])]}
                            for d in inf.decision_points],
    }
    events = []
    for e in s.schedule.events:
        ev = {"mode_id": e.mode_id, "direction": e.direction, "time": _fmt(e.time),
              "platform": e.platform, "capacity": e.capacity}
        if e.expected_load is not None:
            ev["expected_load"] = e.expected_load
        events.append(ev)
    doc["schedule"] = {"load_factor": s.schedule.load_factor, "events": events}
    acts = []
    for a in s.activities.activities:
        loc = a.location if isinstance(a.location, str) else [_fmt(a.location[0]), _fmt(a.location[1])]
        w0, w1 = a.window
        acts.append({"type": a.type, "location": loc,
                     "window": [_fmt(w0), _fmt(w1) if math.isfinite(w1) else w1]})
    doc["activities"] = acts
    if s.observations is not None and counts_name is not None:
        doc["observations"] = counts_name
    return doc


def save_scenario(s: Scenario, path: str | Path) -> Path:
    """Write ``s`` as a YAML document plus a ``<stem>_counts.csv`` sidecar."""
    path = Path(path)
    counts_name = None
    if s.observations is not None:
        counts_name = f"{path.stem}_counts.csv"
        (path.parent / counts_name).write_text(format_counts_csv(s.observations), encoding="utf-8")
    path.write_text(yaml.safe_dump(scenario_to_dict(s, counts_name), sort_keys=False,
                                   default_flow_style=None), encoding="utf-8")
    return path
