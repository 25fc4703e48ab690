"""Inner optimizers and restart-time optimizer-state surgery."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import NonFiniteError, ParameterError
from .linalg import read_matrix_csv, rms_norm, write_matrix_csv
from .tolerances import tol


@dataclass(frozen=True)
class Beta2Warmup:
    """Cosine ramp of beta2 from ``beta2_min`` back to ``beta2_final`` over
    ``window`` steps, starting at step ``restart_step``."""

    beta2_min: float = 0.95
    beta2_final: float = 0.999
    window: int = 0
    restart_step: int = 0


Beta2 = Union[float, Beta2Warmup]


def beta2_at(schedule: Beta2, t: int) -> float:
    if not isinstance(schedule, Beta2Warmup):
        return float(schedule)
    if t < schedule.restart_step:
        raise ParameterError(f"step {t} precedes the restart step {schedule.restart_step}")
    elapsed = t - schedule.restart_step
    if schedule.window <= 0 or elapsed >= schedule.window:
        return schedule.beta2_final
    ramp = 0.5 * (1.0 - math.cos(math.pi * elapsed / schedule.window))
    return schedule.beta2_min + (schedule.beta2_final - schedule.beta2_min) * ramp


def final_beta2(schedule: Beta2) -> float:
    return schedule.beta2_final if isinstance(schedule, Beta2Warmup) else float(schedule)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: Beta2 = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros(cls, shape, **hyper) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), **hyper)

    def __post_init__(self):
        if self.m.shape != self.v.shape:
            raise ParameterError(f"moment shapes differ: {self.m.shape} vs {self.v.shape}")
        if not 0.0 < self.beta1 < 1.0:
            raise ParameterError(f"beta1 must lie in (0, 1), got {self.beta1}")
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight decay must be >= 0, got {self.weight_decay}")


def _require_finite(grad: np.ndarray) -> None:
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient")


def adamw_step(state: AdamState, param, grad, lr: float, t: Optional[int] = None):
    """One decoupled-weight-decay Adam step.

    ``t`` is the bias-correction index (defaults to ``state.step + 1``).
    The state is updated in place and also returned; on a non-finite
    gradient nothing is touched.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ParameterError(f"shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if not lr > 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    _require_finite(grad)
    t = state.step + 1 if t is None else int(t)
    b1 = state.beta1
    b2 = beta2_at(state.beta2, t)
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1**t)
    v_hat = state.v / (1.0 - b2**t)
    new = param - lr * state.weight_decay * param - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    state.step += 1
    return new, state


def sgd_step(param, grad, lr: float) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    _require_finite(grad)
    return np.asarray(param, dtype=np.float64) - lr * grad


@dataclass(frozen=True)
class LrSchedule:
    """Step-size rule indexed from ``k = 1``.

    ``constant``: ``base_lr``; ``cosine``: linear warm-up over
    ``ceil(warmup_ratio * total_steps)`` steps then cosine decay to zero;
    ``diminishing``: ``base_lr / k``.
    """

    kind: str = "constant"
    base_lr: float = 1e-3
    warmup_ratio: float = 0.0
    total_steps: int = 1

    KINDS = ("constant", "cosine", "diminishing")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ParameterError(f"unknown schedule kind {self.kind!r}; expected one of {self.KINDS}")
        if not self.base_lr > 0:
            raise ParameterError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ParameterError(f"warmup_ratio must lie in [0, 1), got {self.warmup_ratio}")

    def __call__(self, k: int) -> float:
        if k < 1:
            raise ParameterError(f"schedule index starts at 1, got {k}")
        if self.kind == "constant":
            return self.base_lr
        if self.kind == "diminishing":
            return self.base_lr / k
        warm = math.ceil(self.warmup_ratio * self.total_steps)
        if k <= warm:
            return self.base_lr * k / warm
        span = max(self.total_steps - warm, 1)
        progress = min((k - 1 - warm) / span, 1.0)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AlignmentReport:
    scale_m: dict[str, float] = field(default_factory=dict)
    scale_v: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)


def _rescale(state: AdamState, g: np.ndarray, side: str, report: AlignmentReport) -> None:
    guard = tol("norm_guard")
    g_rms = rms_norm(g)
    v_rms = rms_norm(state.v)
    if v_rms < guard:
        report.flags.append(f"v_{side}_guard")
    else:
        s = g_rms**2 / v_rms
        state.v = s * state.v
        report.scale_v[side] = s
    m_rms = rms_norm(state.m)
    if m_rms < guard:
        report.flags.append(f"m_{side}_guard")
    else:
        s = g_rms / m_rms
        state.m = s * state.m
        report.scale_m[side] = s


def align_states_after_restart(
    state_a: AdamState,
    state_b: AdamState,
    g_a,
    g_b,
    t_a=None,
    t_b=None,
    *,
    restart_step: Optional[int] = None,
    window: int = 0,
    beta2_min: float = 0.95,
) -> AlignmentReport:
    """Bring pre-restart Adam states in line with post-restart gradients.

    Momenta are first carried into the new bases (``m_A @ t_a``,
    ``t_b.T @ m_B``), then both moments are rescaled so that
    ``rms(m) = rms(g)`` and ``rms(v) = rms(g)**2``. Finally the beta2
    warm-up is re-armed at ``restart_step`` (default: the next step).
    States are modified in place.
    """
    report = AlignmentReport()
    g_a = np.asarray(g_a, dtype=np.float64)
    g_b = np.asarray(g_b, dtype=np.float64)
    if t_a is not None:
        state_a.m = state_a.m @ np.asarray(t_a)
    if t_b is not None:
        state_b.m = np.asarray(t_b).T @ state_b.m
    _rescale(state_a, g_a, "a", report)
    _rescale(state_b, g_b, "b", report)
    for state in (state_a, state_b):
        start = state.step + 1 if restart_step is None else restart_step
        state.beta2 = Beta2Warmup(beta2_min, final_beta2(state.beta2), int(window), int(start))
    return report


def save_state(state: AdamState, directory) -> None:
    """Write a state snapshot as plain CSV files (m.csv, v.csv, meta.csv)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "m.csv", state.m)
    write_matrix_csv(out / "v.csv", state.v)
    meta = {
        "ndim": state.m.ndim,
        "step": state.step,
        "beta1": state.beta1,
        "eps": state.eps,
        "weight_decay": state.weight_decay,
    }
    if isinstance(state.beta2, Beta2Warmup):
        meta.update(
            beta2_kind="warmup",
            beta2_min=state.beta2.beta2_min,
            beta2_final=state.beta2.beta2_final,
            beta2_window=state.beta2.window,
            beta2_restart_step=state.beta2.restart_step,
        )
    else:
        meta.update(beta2_kind="constant", beta2_final=state.beta2)
    with open(out / "meta.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for k, v in meta.items():
            w.writerow([k, format(v, ".17g") if isinstance(v, float) else v])


def load_state(directory) -> AdamState:
    src = Path(directory)
    with open(src / "meta.csv", newline="") as fh:
        meta = {row["key"]: row["value"] for row in csv.DictReader(fh)}
    if meta["beta2_kind"] == "warmup":
        beta2: Beta2 = Beta2Warmup(
            float(meta["beta2_min"]),
            float(meta["beta2_final"]),
            int(meta["beta2_window"]),
            int(meta["beta2_restart_step"]),
        )
    else:
        beta2 = float(meta["beta2_final"])
    m = read_matrix_csv(src / "m.csv")
    v = read_matrix_csv(src / "v.csv")
    if int(meta["ndim"]) == 1:
        m, v = m.reshape(-1), v.reshape(-1)
    return AdamState(
        m,
        v,
        step=int(meta["step"]),
        beta1=float(meta["beta1"]),
        beta2=beta2,
        eps=float(meta["eps"]),
        weight_decay=float(meta["weight_decay"]),
    )
