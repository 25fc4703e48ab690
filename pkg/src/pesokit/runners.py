"""Training drivers built on one generic explore/exploit loop.

``run_peso_generic`` owns the iteration: it fires the exploration plugin on
steps with ``(k - 1) % K == 0``, runs the exploitation plugin every step and
records the trace. The concrete methods below are plugin bundles.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteError, ParameterError
from .linalg import svd_top_r
from .optim import AdamState, LrSchedule, adamw_step, align_states_after_restart, sgd_step
from .problems import NoiseModel, Objective, lora_grads, noisy_grad, spectral_grads
from .subspace import (
    AdapterPair,
    AnchoredState,
    ProjectedSubspace,
    SmoothingConfig,
    SpectralAdapter,
    absorb,
    galore_step,
    left_subspace,
    project_svd_subspace,
    restart_adapters_from_gradient,
    smooth_restart,
)
from .tolerances import tol
from .trace import RunTrace, TraceRecord, TraceSummary, trace_summary

EXPLORATIONS = ("full-gradient-restart", "muon-restart", "warm-start-bases", "none")
OPTIMIZERS = ("adamw", "sgd", "none")
COORDINATES = ("factors", "core")


@dataclass
class PesoConfig:
    total_steps: int = 1000
    frequency: int = 1
    rank: int = 3
    gamma: float = 1.0
    exploration: str = "full-gradient-restart"
    optimizer: str = "adamw"
    # "factors": train (A, B); "core": train C in W~ + U C V with the restart bases fixed
    coordinates: str = "factors"
    lr: LrSchedule = field(default_factory=lambda: LrSchedule("constant", 1e-2))
    # None: constant eta = 1/gamma at every restart
    restart_lr: Optional[LrSchedule] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    smoothing: Optional[SmoothingConfig] = None
    alignment: bool = False
    beta2_min: float = 0.95
    # None: floor(K / 3)
    warmup_window: Optional[int] = None
    noise: Optional[NoiseModel] = None
    seed: int = 0
    max_restarts: Optional[int] = None
    galore_adam: bool = False
    record_wall_time: bool = False
    debug: bool = False

    def __post_init__(self):
        if not isinstance(self.frequency, int) or self.frequency < 1:
            raise ParameterError(f"frequency K must be a positive integer, got {self.frequency!r}")
        if self.total_steps < 1:
            raise ParameterError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.rank < 1:
            raise ParameterError(f"rank must be >= 1, got {self.rank}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if self.exploration not in EXPLORATIONS:
            raise ParameterError(f"exploration must be one of {EXPLORATIONS}, got {self.exploration!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ParameterError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.coordinates not in COORDINATES:
            raise ParameterError(f"coordinates must be one of {COORDINATES}, got {self.coordinates!r}")
        if self.coordinates == "core" and self.smoothing is not None:
            raise ParameterError("smoothing needs factor coordinates")
        if self.max_restarts is not None and self.max_restarts < 0:
            raise ParameterError("max_restarts must be >= 0")

    @property
    def window(self) -> int:
        return self.frequency // 3 if self.warmup_window is None else self.warmup_window

    def restart_eta(self, j: int) -> float:
        """Step size of the ``j``-th restart (1-based)."""
        return 1.0 / self.gamma if self.restart_lr is None else self.restart_lr(j)

    def adam(self, shape) -> AdamState:
        return AdamState.zeros(shape, beta1=self.beta1, beta2=self.beta2, eps=self.eps, weight_decay=self.weight_decay)


def gate(k: int, frequency: int) -> bool:
    return (k - 1) % frequency == 0


@dataclass(frozen=True)
class RestartRecord:
    """Both sides of one restart jump, for bracketing descent checks."""

    step: int
    loss_before: float  # at W_{k-1}
    loss_after: float  # right after reassignment, before the inner step
    grad_norm: float  # ||G_k|| at the anchored point
    proj_norm: float  # ||P_S(G_k)||
    delta: float  # dist(G_k, S_k)
    eta: float
    flags: tuple[str, ...] = ()


@dataclass
class RunResult:
    w: np.ndarray
    trace: RunTrace
    restart_steps: list[int]
    restarts: list[RestartRecord]
    summary: Optional[TraceSummary] = None

    @property
    def min_restart_grad_norm(self) -> Optional[float]:
        if not self.restarts:
            return None
        return min(r.grad_norm for r in self.restarts)


class RunAborted(RuntimeError):
    """A run stopped early; ``result`` holds the partial trace."""

    def __init__(self, message: str, result: RunResult, numerical: bool):
        super().__init__(message)
        self.result = result
        self.numerical = numerical


def run_peso_generic(
    objective: Objective,
    config: PesoConfig,
    update_subspace: Optional[Callable[[int], Optional[RestartRecord]]],
    opt: Callable[[int], None],
    realize: Callable[[], np.ndarray],
) -> RunResult:
    """Generic explore/exploit loop.

    ``update_subspace(k)`` runs at gated steps and may return a
    :class:`RestartRecord`; ``opt(k)`` runs every step; ``realize()`` returns
    the current full weight matrix. ``update_subspace=None`` disables
    exploration (the subspace stays fixed).
    """
    trace = RunTrace()
    restart_steps: list[int] = []
    restarts: list[RestartRecord] = []
    w_prev = realize()
    loss_prev = objective.loss(w_prev)
    slack = tol("descent")

    def partial() -> RunResult:
        return RunResult(w_prev, trace, restart_steps, restarts, trace_summary(trace) if len(trace) else None)

    for k in range(1, config.total_steps + 1):
        t0 = time.perf_counter()
        fire = update_subspace is not None and gate(k, config.frequency) and (config.max_restarts is None or len(restart_steps) < config.max_restarts)
        record = None
        try:
            if fire:
                restart_steps.append(k)
                record = update_subspace(k)
                if record is not None:
                    restarts.append(record)
            opt(k)
            w = realize()
        except NonFiniteError as exc:
            raise RunAborted(f"step {k}: {exc}", partial(), numerical=True) from exc
        except Exception as exc:
            raise RunAborted(f"step {k}: {type(exc).__name__}: {exc}", partial(), numerical=False) from exc
        loss = objective.loss(w)
        if not math.isfinite(loss) or not np.all(np.isfinite(w)):
            trace.append(TraceRecord(k, loss, math.nan, None, fire, False, math.nan, None))
            raise RunAborted(f"step {k}: non-finite loss", partial(), numerical=True)
        grad_norm = float(np.linalg.norm(objective.full_grad(w)))
        violation = loss > loss_prev + slack * max(1.0, abs(loss_prev))
        wall = (time.perf_counter() - t0) * 1e3 if config.record_wall_time else None
        trace.append(
            TraceRecord(
                step=k,
                loss=loss,
                grad_norm=grad_norm,
                delta_k=None if record is None else record.delta,
                restart=fire,
                descent_violation=violation,
                inc_norm=float(np.linalg.norm(w - w_prev)),
                wall_ms=wall,
            )
        )
        w_prev, loss_prev = w, loss
    return RunResult(w_prev, trace, restart_steps, restarts, trace_summary(trace))


class _Method:
    def __init__(self, objective: Objective, config: PesoConfig):
        self.objective = objective
        self.config = config
        self._cache: Optional[tuple[tuple[int, int], np.ndarray]] = None

    def gradient(self, w: np.ndarray, k: int, stream: int) -> np.ndarray:
        """(Possibly noisy) full gradient; memoized per ``(k, stream)``."""
        key = (k, stream)
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        g = noisy_grad(self.objective.full_grad(w), self.config.noise, k, stream)
        self._cache = (key, g)
        return g

    def _restart_measures(self, g_true: np.ndarray, u: np.ndarray, vt: np.ndarray) -> tuple[float, float]:
        proj = project_svd_subspace(g_true, u, vt)
        return float(np.linalg.norm(proj)), float(np.linalg.norm(g_true - proj))

    def run(self) -> RunResult:
        explore = None if self.config.exploration == "none" else self.explore
        return run_peso_generic(self.objective, self.config, explore, self.exploit, self.realized)


class LoraMethod(_Method):
    """LoRA factors on an anchored baseline: PESO-LoRA-R, or plain LoRA when
    exploration is ``none``."""

    def __init__(self, objective: Objective, config: PesoConfig, init: str = "zeros"):
        super().__init__(objective, config)
        m, n = objective.shape
        r = config.rank
        if r > min(m, n):
            raise ParameterError(f"rank {r} exceeds min{objective.shape}")
        self.anchored = AnchoredState.start(objective.initial_point(), debug=config.debug)
        if init == "lora":
            rng = np.random.default_rng(config.seed)
            a = rng.normal(0.0, math.sqrt(1.0 / r), size=(m, r))
        elif init == "zeros":
            a = np.zeros((m, r))
        else:
            raise ParameterError(f"unknown adapter init {init!r}")
        self.adapter = AdapterPair(a, np.zeros((r, n)), config.gamma)
        self.state_a = config.adam((m, r))
        self.state_b = config.adam((r, n))
        # core coordinates: realized increment is basis_u @ core @ basis_v
        self.basis_u = np.eye(m, r)
        self.basis_v = np.eye(r, n)
        self.core = np.zeros((r, r))
        self.state_c = config.adam((r, r))
        self.n_restarts = 0
        self.alignment_flags: list[tuple[int, list[str]]] = []

    def increment(self) -> np.ndarray:
        if self.config.coordinates == "core":
            return self.basis_u @ self.core @ self.basis_v
        return self.adapter.product()

    def realized(self) -> np.ndarray:
        return self.anchored.w_tilde + self.increment()

    def explore(self, k: int) -> Optional[RestartRecord]:
        cfg = self.config
        if cfg.exploration == "none":
            return None
        loss_before = self.objective.loss(self.realized())
        self.anchored = absorb(self.anchored, self.increment())
        w_t = self.anchored.w_tilde
        g_true = self.objective.full_grad(w_t)
        g = noisy_grad(g_true, cfg.noise, k, 0)
        self.n_restarts += 1
        eta = cfg.restart_eta(self.n_restarts)
        f = svd_top_r(-g, cfg.rank)
        proj_norm, delta = self._restart_measures(g_true, f.u, f.vt)
        t_a = t_b = None
        flags: tuple[str, ...] = ()
        current = replace(self.adapter, gamma=1.0 / eta)
        if cfg.coordinates == "core":
            self.basis_u, self.basis_v = f.u, f.vt
            if cfg.exploration == "muon-restart":
                self.core = np.diag(eta * self._kept(f.sigma, g.size))
            else:
                self.core = np.diag(eta * f.sigma)
            if not np.any(g):
                flags = ("degenerate",)
        elif cfg.exploration == "muon-restart":
            root = math.sqrt(eta) * self._kept(f.sigma, g.size)
            self.adapter = AdapterPair(f.u * root, root[:, None] * f.vt, 1.0 / eta)
        elif cfg.exploration == "warm-start-bases":
            raise ParameterError("warm-start-bases exploration applies to the spectral adapter only")
        elif cfg.smoothing is not None:
            res = smooth_restart(current, g, cfg.smoothing)
            self.adapter, flags = res.adapter, res.flags
            if "fallback" not in flags:
                t_a, t_b = res.t_a, res.t_b
        else:
            self.adapter = restart_adapters_from_gradient(g, cfg.rank, 1.0 / eta)
            flags = self.adapter.flags
        loss_after = self.objective.loss(self.realized())
        if cfg.alignment and cfg.optimizer == "adamw" and cfg.coordinates == "factors":
            g_new = self.gradient(self.realized(), k, 1)
            g_a, g_b = lora_grads(g_new, self.adapter)
            report = align_states_after_restart(
                self.state_a,
                self.state_b,
                g_a,
                g_b,
                t_a,
                t_b,
                restart_step=self.state_a.step + 1,
                window=cfg.window,
                beta2_min=cfg.beta2_min,
            )
            if report.flags:
                flags = flags + tuple(report.flags)
        return RestartRecord(k, loss_before, loss_after, float(np.linalg.norm(g_true)), proj_norm, delta, eta, flags)

    @staticmethod
    def _kept(sigma: np.ndarray, size: int) -> np.ndarray:
        """Indicator of singular values above the numerical-rank cut."""
        if sigma[0] == 0.0:
            return np.zeros_like(sigma)
        return (sigma > sigma[0] * 16 * size * np.finfo(np.float64).eps).astype(np.float64)

    def exploit(self, k: int) -> None:
        cfg = self.config
        if cfg.optimizer == "none":
            return
        lr = cfg.lr(k)
        g = self.gradient(self.realized(), k, 1)
        if cfg.coordinates == "core":
            g_c = self.basis_u.T @ g @ self.basis_v.T
            if cfg.optimizer == "adamw":
                self.core, _ = adamw_step(self.state_c, self.core, g_c, lr)
            else:
                self.core = sgd_step(self.core, g_c, lr)
            return
        g_a, g_b = lora_grads(g, self.adapter)
        ad = self.adapter
        if cfg.optimizer == "adamw":
            a, _ = adamw_step(self.state_a, ad.a, g_a, lr)
            b, _ = adamw_step(self.state_b, ad.b, g_b, lr)
        else:
            a, b = sgd_step(ad.a, g_a, lr), sgd_step(ad.b, g_b, lr)
        self.adapter = AdapterPair(a, b, ad.gamma, ad.flags)


class SpectralMethod(_Method):
    """``W0 + U diag(xi) V``: bases move at gated steps, coordinates every step."""

    def __init__(self, objective: Objective, config: PesoConfig):
        super().__init__(objective, config)
        m, n = objective.shape
        r = config.rank
        if r > min(m, n):
            raise ParameterError(f"rank {r} exceeds min{objective.shape}")
        self.w0 = np.array(objective.initial_point(), dtype=np.float64)
        g0 = noisy_grad(objective.full_grad(self.w0), config.noise, 0, 0)
        f = svd_top_r(-g0, r)
        self.adapter = SpectralAdapter(f.u, np.zeros(r), f.vt)
        self.state_u = config.adam((m, r))
        self.state_v = config.adam((r, n))
        self.state_xi = config.adam((r,))

    def realized(self) -> np.ndarray:
        return self.w0 + self.adapter.increment()

    def _step(self, state, param, grad, lr, k):
        if self.config.optimizer == "adamw":
            return adamw_step(state, param, grad, lr, t=k)[0]
        return sgd_step(param, grad, lr)

    def explore(self, k: int) -> None:
        cfg = self.config
        if cfg.exploration == "none" or cfg.optimizer == "none":
            return None
        g = self.gradient(self.realized(), k, 0)
        g_u, _, g_v = spectral_grads(g, self.adapter)
        lr = cfg.lr(k)
        ad = self.adapter
        u = self._step(self.state_u, ad.u, g_u, lr, k)
        v = self._step(self.state_v, ad.v, g_v, lr, k)
        self.adapter = SpectralAdapter(u, ad.xi, v)
        return None

    def exploit(self, k: int) -> None:
        if self.config.optimizer == "none":
            return
        g = self.gradient(self.realized(), k, 1)
        _, g_xi, _ = spectral_grads(g, self.adapter)
        ad = self.adapter
        xi = self._step(self.state_xi, ad.xi, g_xi, self.config.lr(k), k)
        self.adapter = SpectralAdapter(ad.u, xi, ad.v)


class ProjectedMethod(_Method):
    """Left-projected subspace descent (GaLore): ``W <- W - eta P P^T G``.

    The subspace coordinates are written back into ``W`` every step, so no
    separate coordinate matrix is stored.
    """

    def __init__(self, objective: Objective, config: PesoConfig, p0: Optional[np.ndarray] = None):
        super().__init__(objective, config)
        m, n = objective.shape
        if config.rank > min(m, n):
            raise ParameterError(f"rank {config.rank} exceeds min{objective.shape}")
        self.w = np.array(objective.initial_point(), dtype=np.float64)
        self.p = None if p0 is None else ProjectedSubspace(np.asarray(p0, dtype=np.float64))
        self.state_r = config.adam((config.rank if p0 is None else self.p.p.shape[1], n))
        self.steps: list[tuple[np.ndarray, np.ndarray, ProjectedSubspace, float]] = []
        self.keep_steps = False

    def realized(self) -> np.ndarray:
        return self.w

    def explore(self, k: int) -> Optional[RestartRecord]:
        cfg = self.config
        if cfg.exploration == "none":
            return None
        g_true = self.objective.full_grad(self.w)
        g = noisy_grad(g_true, cfg.noise, k, 0)
        self.p = left_subspace(g, cfg.rank)
        pp = self.p.p
        proj = pp @ (pp.T @ g_true)
        loss = self.objective.loss(self.w)
        return RestartRecord(
            k,
            loss,
            loss,
            float(np.linalg.norm(g_true)),
            float(np.linalg.norm(proj)),
            float(np.linalg.norm(g_true - proj)),
            cfg.lr(k),
        )

    def exploit(self, k: int) -> None:
        cfg = self.config
        if cfg.optimizer == "none":
            return
        if self.p is None:
            raise ParameterError("projected method has no subspace: give p0 or enable exploration")
        g = self.gradient(self.w, k, 1)
        lr = cfg.lr(k)
        if cfg.galore_adam and cfg.optimizer == "adamw":
            direction, _ = adamw_step(self.state_r, np.zeros(self.state_r.m.shape), self.p.p.T @ g, lr)
            w_new = self.w + self.p.p @ direction
        else:
            w_new = galore_step(self.w, g, self.p, lr)
        if self.keep_steps:
            self.steps.append((self.w, g, self.p, lr))
        self.w = w_new


def run_peso_lora_r(objective: Objective, config: PesoConfig) -> RunResult:
    if config.exploration not in ("full-gradient-restart", "muon-restart"):
        config = replace(config, exploration="full-gradient-restart")
    return LoraMethod(objective, config, init="zeros").run()


def run_lora_baseline(objective: Objective, config: PesoConfig) -> RunResult:
    return LoraMethod(objective, replace(config, exploration="none"), init="lora").run()


def run_peso_lora_t(objective: Objective, config: PesoConfig) -> RunResult:
    if config.exploration not in ("warm-start-bases", "none"):
        config = replace(config, exploration="warm-start-bases")
    return SpectralMethod(objective, config).run()


def run_galore_baseline(objective: Objective, config: PesoConfig, p0=None) -> RunResult:
    if config.exploration not in ("full-gradient-restart", "none"):
        config = replace(config, exploration="full-gradient-restart")
    return ProjectedMethod(objective, config, p0).run()


RUNNERS = {
    "lora": run_lora_baseline,
    "peso_lora_r": run_peso_lora_r,
    "peso_lora_t": run_peso_lora_t,
    "galore": run_galore_baseline,
}
