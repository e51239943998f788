import io

import pytest

from edgesched.simcore import (Dispatch, EventLog, PlatformSpec, SimClock, UnknownModelError,
                               batch_inference_time, execute_slot, interference_factor,
                               memory_footprint)
from edgesched.workload import Request


def reqs(model, n, slo=100.0, t=0, start=0):
    return [Request(start + i, model, "text", (16,), slo, t) for i in range(n)]


def test_default_platform():
    spec = PlatformSpec()
    assert spec.mem_capacity == 8192.0
    assert spec.fixed_us == 3100


def test_platform_validation():
    with pytest.raises(ValueError):
        PlatformSpec(mem_capacity=0)
    with pytest.raises(ValueError):
        PlatformSpec(interference_power=0.5)
    with pytest.raises(ValueError, match="unknown"):
        PlatformSpec.from_mapping({"bogus": 1})


def test_footprint_and_factor(small_profile):
    assert memory_footprint(small_profile, 4, 3) == 3 * (200 + 40)
    assert interference_factor(1, 0.9) == 1.0
    assert interference_factor(3, 0.5) == pytest.approx(1 + 0.08 * 2 * 2.0)
    assert batch_inference_time(small_profile, 4, 1.5) == pytest.approx(27.0)


def test_single_dispatch_latency_decomposition(small_profile):
    clock = SimClock(now=5000)
    batch = reqs("m", 4, t=1000)
    out, = execute_slot(clock, [Dispatch(small_profile, batch, 1)], PlatformSpec())
    assert out.inference_us == 18000
    for r in batch:
        bd = out.breakdown(r.id)
        assert bd.t_w == 4000
        assert bd.total == out.per_request_latency[r.id] == 3100 + 4000 + 18000
    assert clock.now == 5000 + 18000
    assert out.slo_violations == frozenset()


def test_batches_share_instances(small_profile):
    clock = SimClock()
    a, b = reqs("m", 2), reqs("m", 2, start=10)
    o1, o2 = execute_slot(clock, [Dispatch(small_profile, a, 1), Dispatch(small_profile, b, 1)],
                          PlatformSpec())
    assert o2.start_us == o1.end_us
    c, d = reqs("m", 2, start=20), reqs("m", 2, start=30)
    o3, o4 = execute_slot(SimClock(), [Dispatch(small_profile, c, 2), Dispatch(small_profile, d, 2)],
                          PlatformSpec(interference_kappa=0.0))
    assert o3.start_us == o4.start_us == 0


def test_overflow_rejects_whole_dispatch(small_profile):
    spec = PlatformSpec(mem_capacity=300.0)
    clock = SimClock()
    batch = reqs("m", 4)
    out, = execute_slot(clock, [Dispatch(small_profile, batch, 2)], spec)
    assert out.overflowed and out.slo_violations == {r.id for r in batch}
    assert out.executed == 0 and clock.now == 0


def test_violation_detected(small_profile):
    batch = reqs("m", 1, slo=10.0)
    out, = execute_slot(SimClock(), [Dispatch(small_profile, batch, 1)], PlatformSpec())
    assert out.slo_violations == {0}


def test_input_validation(small_profile):
    with pytest.raises(ValueError, match="empty"):
        execute_slot(SimClock(), [Dispatch(small_profile, [], 1)], PlatformSpec())
    with pytest.raises(ValueError, match="arrives after"):
        execute_slot(SimClock(), [Dispatch(small_profile, reqs("m", 1, t=5), 1)], PlatformSpec())
    with pytest.raises(UnknownModelError):
        execute_slot(SimClock(), [Dispatch(small_profile, reqs("m", 1), 1)], PlatformSpec(), {})


def test_event_log_roundtrip(small_profile):
    log = EventLog()
    execute_slot(SimClock(), [Dispatch(small_profile, reqs("m", 3), 1)], PlatformSpec(),
                 log=log)
    buf = io.StringIO()
    log.write(buf)
    buf.seek(0)
    rows = EventLog.read(buf)
    assert rows == log.records and rows[0]["event_kind"] == "complete"
    assert rows[0]["batch_size"] == 3


def test_documented_cost_examples(small_profile, res_profile):
    assert memory_footprint(small_profile, 4, 2) == 480.0
    assert memory_footprint(small_profile, 1, 1) == 210.0
    assert interference_factor(1, 0.7) == 1.0
    assert interference_factor(5, 0.5) == pytest.approx(1.64)
    assert batch_inference_time(small_profile, 1) == 12.0
    rates = [b / batch_inference_time(res_profile, b) for b in range(1, 130)]
    assert all(x < y for x, y in zip(rates, rates[1:]))
