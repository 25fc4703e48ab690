"""Per-step run records and their CSV form."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import ParameterError

HEADER = ("step", "loss", "grad_norm", "delta_k", "restart", "descent_violation", "inc_norm", "wall_ms")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    loss: float
    grad_norm: float
    delta_k: Optional[float]  # only defined at restart steps
    restart: bool
    descent_violation: bool
    inc_norm: float
    wall_ms: Optional[float] = None


def _fmt(x: Optional[float]) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def _parse(x: str) -> Optional[float]:
    return None if x == "" else float(x)


class RunTrace:
    def __init__(self, records: Iterable[TraceRecord] = ()):
        self.records: list[TraceRecord] = list(records)

    def append(self, record: TraceRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ParameterError(f"non-monotone step index {record.step} after {self.records[-1].step}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunTrace) and self.records == other.records

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def write(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for r in self.records:
            writer.writerow(
                [
                    r.step,
                    _fmt(r.loss),
                    _fmt(r.grad_norm),
                    _fmt(r.delta_k),
                    int(r.restart),
                    int(r.descent_violation),
                    _fmt(r.inc_norm),
                    _fmt(r.wall_ms),
                ]
            )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write(fh)

    def dumps(self) -> str:
        buf = io.StringIO()
        self.write(buf)
        return buf.getvalue()

    @classmethod
    def read(cls, fh) -> "RunTrace":
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != HEADER:
            raise ParameterError(f"unexpected trace header {header}")
        out = cls()
        for row in reader:
            if not row:
                continue
            step, loss, gnorm, delta, restart, viol, inc, wall = row
            out.append(
                TraceRecord(
                    int(step),
                    float(loss),
                    float(gnorm),
                    _parse(delta),
                    bool(int(restart)),
                    bool(int(viol)),
                    float(inc),
                    _parse(wall),
                )
            )
        return out

    @classmethod
    def from_csv(cls, path) -> "RunTrace":
        with open(Path(path), newline="") as fh:
            return cls.read(fh)

    @classmethod
    def loads(cls, text: str) -> "RunTrace":
        return cls.read(io.StringIO(text))


@dataclass(frozen=True)
class TraceSummary:
    min_grad_norm: float
    argmin_step: int
    final_loss: float
    mean_delta: Optional[float]
    terminal_delta: Optional[float]
    descent_violations: int
    restarts: int

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def trace_summary(trace: RunTrace) -> TraceSummary:
    """Convergence summary: running-min gradient norm (a liminf proxy),
    terminal loss, restart distances and descent-audit count."""
    if len(trace) == 0:
        raise ParameterError("cannot summarize an empty trace")
    best = min(trace, key=lambda r: (r.grad_norm, r.step))
    deltas = [r.delta_k for r in trace if r.delta_k is not None]
    return TraceSummary(
        min_grad_norm=best.grad_norm,
        argmin_step=best.step,
        final_loss=trace[-1].loss,
        mean_delta=math.fsum(deltas) / len(deltas) if deltas else None,
        terminal_delta=deltas[-1] if deltas else None,
        descent_violations=sum(r.descent_violation for r in trace),
        restarts=sum(r.restart for r in trace),
    )
