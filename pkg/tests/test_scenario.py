import dataclasses
import textwrap
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hubsim.scenario import (
    Activity,
    ActivitySet,
    DecisionPoint,
    ObservationRecord,
    ObservationSet,
    Portal,
    Scenario,
    ScenarioFormatError,
    ScenarioValidationError,
    Schedule,
    VehicleEvent,
    load_scenario,
    parse_counts_csv,
    save_scenario,
    validate_scenario,
)
from hubsim.synthetic import hub_scenario

from conftest import square_infrastructure

MINIMAL = """\
horizon: 600
infrastructure:
  walkable:
    - [[0, 0], [10, 0], [10, 10], [0, 10]]
  portals:
    - {id: A, segment: [[0, 6], [0, 4]], kind: entrance, attractions: [a]}
    - {id: B, segment: [[10, 4], [10, 6]], kind: entrance, attractions: [b]}
schedule:
  events: []
"""


def write(tmp_path: Path, text: str, name="s.yaml") -> Path:
    p = tmp_path / name
    p.write_text(textwrap.dedent(text), encoding="utf-8")
    return p


def test_minimal_file_loads(tmp_path):
    s = load_scenario(write(tmp_path, MINIMAL))
    assert len(s.infrastructure.portals) == 2
    assert s.schedule.events == ()
    assert s.observations is None
    assert s.horizon == 600


def test_missing_file_is_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "nope.yaml")


def test_yaml_syntax_error_names_line(tmp_path):
    bad = MINIMAL.replace("schedule:\n", "schedule: [\n")
    with pytest.raises(ScenarioFormatError, match=r"line \d+"):
        load_scenario(write(tmp_path, bad))


def test_bad_field_names_field(tmp_path):
    bad = MINIMAL.replace("kind: entrance, attractions: [a]", "kind: door")
    with pytest.raises(ScenarioFormatError, match=r"infrastructure\.portals\[0\]\.kind"):
        load_scenario(write(tmp_path, bad))


def test_counts_csv_error_names_line():
    with pytest.raises(ScenarioFormatError, match="line 3"):
        parse_counts_csv("portal_id,direction,t0_s,t1_s,count\nA,in,0,60,3\nA,sideways,0,60,1\n")


def test_portal_off_boundary_is_named(tmp_path):
    bad = MINIMAL.replace("[[10, 4], [10, 6]]", "[[9, 4], [9, 6]]")
    with pytest.raises(ScenarioValidationError) as exc:
        load_scenario(write(tmp_path, bad))
    assert any("portal B" in v and "boundary" in v for v in exc.value.violations)


def test_well_formed_fixture_has_no_violations(hub):
    assert validate_scenario(hub) == []


def test_event_after_horizon_is_one_violation(hub):
    late = VehicleEvent("TX", "arrival", hub.horizon + 1, "P1", 100, 10)
    s = dataclasses.replace(hub, schedule=Schedule(hub.schedule.events + (late,)))
    v = validate_scenario(s)
    assert len(v) == 1
    assert "TX" in v[0]


def test_decision_point_in_obstacle_names_point(hub):
    inf = hub.infrastructure
    inside = DecisionPoint("KIOSK", (20.0, 10.0))
    s = dataclasses.replace(hub, infrastructure=dataclasses.replace(
        inf, decision_points=inf.decision_points + (inside,)))
    v = validate_scenario(s)
    assert len(v) == 1
    assert "KIOSK" in v[0] and "obstacle" in v[0]


@given(x=st.floats(0.5, 39.5), y=st.floats(0.5, 19.5))
@settings(max_examples=60, deadline=None)
def test_decision_point_violation_matches_point_in_polygon(x, y):
    # independent oracle: axis-aligned kiosk test
    s = hub_scenario()
    inf = s.infrastructure
    s = dataclasses.replace(s, infrastructure=dataclasses.replace(
        inf, decision_points=(DecisionPoint("Q", (x, y)),)))
    in_kiosk = 17.0 <= x <= 23.0 and 8.0 <= y <= 12.0
    flagged = any("Q" in v for v in validate_scenario(s))
    assert flagged == in_kiosk


def test_validation_is_pure(hub):
    bad = dataclasses.replace(hub, horizon=-1)
    assert validate_scenario(bad) == validate_scenario(bad)


def test_various_violations():
    inf = square_infrastructure()
    sched = Schedule((VehicleEvent("T", "arrival", 10, "A", 10, 20),))
    obs = ObservationSet((
        ObservationRecord("A", "in", 0, 60, 3),
        ObservationRecord("A", "in", 30, 90, 3),
        ObservationRecord("Z", "out", 0, 60, 1),
    ))
    acts = ActivitySet((Activity("work", "Q", (0, 10)),))
    v = validate_scenario(Scenario(inf, sched, acts, obs, 100))
    text = "\n".join(v)
    assert "not a platform-access portal" in text
    assert "expected_load 20" in text
    assert "overlap" in text
    assert "unknown portal 'Z'" in text
    assert "unknown portal 'Q'" in text


def test_duplicate_portal_and_clockwise_ring():
    p = Portal("A", ((0.0, 6.0), (0.0, 4.0)), "entrance")
    inf = square_infrastructure(portals=(p, p))
    assert any("duplicate" in v for v in validate_scenario(Scenario(inf, Schedule(), ActivitySet())))
    cw = dataclasses.replace(inf, walkable=(tuple(reversed(inf.walkable[0])),))
    assert any("counter-clockwise" in v for v in validate_scenario(Scenario(cw, Schedule(), ActivitySet())))


def test_arrival_load_defaults_from_load_factor(tmp_path):
    text = MINIMAL.replace("kind: entrance, attractions: [b]", "kind: platform-access").replace(
        "events: []", "load_factor: 0.5\n  events:\n    - {mode_id: T, direction: arrival, time: 10, "
        "platform: B, capacity: 90}\n    - {mode_id: U, direction: departure, time: 20, "
        "platform: B, capacity: 90}")
    s = load_scenario(write(tmp_path, text))
    assert s.schedule.event("T").expected_load == 45
    assert s.schedule.event("U").expected_load is None


def _corpus():
    hub = hub_scenario()
    yield hub
    yield hub_scenario(departure=True, tags={"E1": ("metro",), "P1": ("train",)})
    yield Scenario(square_infrastructure(), Schedule(), ActivitySet(
        (Activity("work", "A", (0.0, 300.0)), Activity("shop", (5.0, 5.0), (10.0, 20.0)))), None, 300)


@pytest.mark.parametrize("s", list(_corpus()))
def test_round_trip_is_structurally_equal(tmp_path, s):
    path = save_scenario(s, tmp_path / "rt.yaml")
    back = load_scenario(path)
    assert back == s
    again = load_scenario(save_scenario(back, tmp_path / "rt2.yaml"))
    assert again == s


def test_committed_scenarios_load():
    root = Path(__file__).resolve().parents[1] / "scenarios"
    files = sorted(root.glob("*.yaml"))
    assert files
    for f in files:
        s = load_scenario(f)
        assert s.observations is not None


def test_counts_csv_has_lf_endings(tmp_path, hub):
    save_scenario(hub, tmp_path / "x.yaml")
    raw = (tmp_path / "x_counts.csv").read_bytes()
    assert raw.startswith(b"portal_id,direction,t0_s,t1_s,count\n")
    assert b"\r" not in raw
