import math
from pathlib import Path

import pytest

from pesokit.errors import ParameterError
from pesokit.trace import HEADER, RunTrace, TraceRecord, trace_summary

FIXTURE = Path(__file__).parent / "fixtures" / "small_trace.csv"


def rec(step, loss, gnorm, delta=None, restart=False, viol=False, inc=0.0, wall=None):
    return TraceRecord(step, loss, gnorm, delta, restart, viol, inc, wall)


def test_header_is_fixed():
    assert ",".join(HEADER) == "step,loss,grad_norm,delta_k,restart,descent_violation,inc_norm,wall_ms"
    assert RunTrace([rec(1, 1.0, 1.0)]).dumps().splitlines()[0] == ",".join(HEADER)


def test_absent_cells_are_empty_not_zero():
    line = RunTrace([rec(1, 0.1, 2.0)]).dumps().splitlines()[1]
    assert line == "1,0.10000000000000001,2,,0,0,0,"


def test_round_trip_exact(tmp_path):
    t = RunTrace(
        [
            rec(1, 1 / 3, math.pi, 0.1, True, False, 1e-300, 12.5),
            rec(2, 2 / 3, 1e-17, None, False, True, 5e300),
        ]
    )
    assert RunTrace.loads(t.dumps()) == t
    t.to_csv(tmp_path / "t.csv")
    assert RunTrace.from_csv(tmp_path / "t.csv") == t


def test_steps_must_increase():
    t = RunTrace([rec(3, 1.0, 1.0)])
    with pytest.raises(ParameterError):
        t.append(rec(3, 1.0, 1.0))


def test_bad_header_rejected():
    with pytest.raises(ParameterError):
        RunTrace.loads("step,loss\n1,2\n")


def test_single_step_summary():
    s = trace_summary(RunTrace([rec(1, 5.0, 2.0, 0.5, True)]))
    assert (s.min_grad_norm, s.argmin_step, s.final_loss) == (2.0, 1, 5.0)
    assert s.mean_delta == s.terminal_delta == 0.5
    assert s.restarts == 1 and s.descent_violations == 0


def test_monotone_trace_argmin_is_last():
    t = RunTrace([rec(k, 10.0 / k, 10.0 / k) for k in range(1, 11)])
    assert trace_summary(t).argmin_step == 10


def test_empty_trace_rejected():
    with pytest.raises(ParameterError):
        trace_summary(RunTrace())


def test_fixture_summary_matches_hand_values():
    # values worked out by hand from the fixture rows
    s = trace_summary(RunTrace.from_csv(FIXTURE))
    assert s.min_grad_norm == 6.324555320336759
    assert s.argmin_step == 7  # tie with step 8 goes to the earlier step
    assert s.final_loss == 10.0000000001
    assert s.mean_delta == pytest.approx(36.5 / 3, rel=1e-15)
    assert s.terminal_delta == 4.0
    assert s.descent_violations == 1
    assert s.restarts == 3


def test_fixture_round_trips_byte_for_byte():
    text = FIXTURE.read_text()
    t = RunTrace.loads(text)
    assert RunTrace.loads(t.dumps()) == t
    assert t[3].wall_ms == 0.5 and t[0].wall_ms is None
