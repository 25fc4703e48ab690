"""Invariant suites run by ``pesokit check``.

Each suite returns a list of :class:`CheckResult`; a result passes when its
measured value sits on the right side of its bound. Bounds come from the
tolerance table, so overriding a tolerance is enough to inject a fault.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .linalg import orthogonal_procrustes, polar_refactor, qr_thin, rms_norm, svd_full, svd_top_r
from .optim import AdamState, Beta2Warmup, LrSchedule, align_states_after_restart, beta2_at
from .problems import (
    NoiseModel,
    central_difference,
    lora_grads,
    mlp_objective,
    quadratic_objective,
    relative_error,
    spectral_grads,
)
from .runners import PesoConfig, ProjectedMethod, run_galore_baseline, run_peso_lora_r
from .subspace import (
    AdapterPair,
    SmoothingConfig,
    SpectralAdapter,
    project_svd_subspace,
    restart_adapters_from_gradient,
    smooth_restart,
)
from .tolerances import tol


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    measured: float
    bound: float
    passed: bool
    detail: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def _le(suite: str, name: str, measured: float, bound: float, detail: str = "") -> CheckResult:
    return CheckResult(suite, name, float(measured), float(bound), bool(measured <= bound), detail)


def _shapes(rng: np.random.Generator, count: int, low: int = 1, high: int = 9):
    for _ in range(count):
        yield int(rng.integers(low, high)), int(rng.integers(low, high))


def suite_linalg(seed: int = 0, samples: int = 200) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    svd_res = orth = ey = lemma = qr_res = qr_orth = polar_res = 0.0
    for m, n in _shapes(rng, samples):
        a = rng.standard_normal((m, n))
        f = svd_full(a)
        k = min(m, n)
        svd_res = max(svd_res, np.linalg.norm(f.reconstruct() - a) / np.linalg.norm(a))
        orth = max(orth, np.abs(f.u.T @ f.u - np.eye(k)).max(), np.abs(f.vt @ f.vt.T - np.eye(k)).max())
        r = int(rng.integers(1, k + 1))
        t = svd_top_r(a, r)
        resid = float(np.sum((a - t.reconstruct()) ** 2))
        tail = float(np.sum(f.sigma[r:] ** 2))
        total = float(np.sum(a * a))
        ey = max(ey, abs(resid - tail) / max(total, 1e-300))
        lemma = max(lemma, (resid - (1.0 - r / k) * total) / total)
        tall = a if m >= n else a.T
        q = qr_thin(tall)
        qr_res = max(qr_res, np.linalg.norm(q.q @ q.r - tall))
        qr_orth = max(qr_orth, np.abs(q.q.T @ q.q - np.eye(tall.shape[1])).max())
        s = rng.standard_normal((k, k))
        p = polar_refactor(s)
        polar_res = max(polar_res, np.linalg.norm((p.r_l * p.sigma) @ p.r_r.T - s))
    return [
        _le("linalg", "svd_reconstruction", svd_res, tol("svd_reconstruction")),
        _le("linalg", "svd_orthogonality", orth, tol("orthogonality")),
        _le("linalg", "eckart_young_tail", ey, tol("eckart_young")),
        _le("linalg", "truncation_lemma_bound", lemma, tol("lemma_slack"), "(||G - G_r||^2 - (1 - r/p)||G||^2) / ||G||^2"),
        _le("linalg", "qr_reconstruction", qr_res, tol("reconstruction")),
        _le("linalg", "qr_orthogonality", qr_orth, tol("orthogonality")),
        _le("linalg", "polar_reconstruction", polar_res, tol("reconstruction")),
    ]


def suite_procrustes(seed: int = 0, pairs: int = 50, rotations: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(pairs):
        m, r = 8, 3
        src = np.linalg.qr(rng.standard_normal((m, r)))[0]
        tgt = np.linalg.qr(rng.standard_normal((m, r)))[0]
        rot = orthogonal_procrustes(src, tgt).rotation
        best = np.linalg.norm(src @ rot.T - tgt)
        for _ in range(rotations):
            q = np.linalg.qr(rng.standard_normal((r, r)))[0]
            worst = max(worst, best - np.linalg.norm(src @ q - tgt))
    return [_le("procrustes", "never_beaten_by_sample", worst, tol("procrustes_margin"))]


def _fd_error(f: Callable[[np.ndarray], float], grad: np.ndarray, x: np.ndarray) -> float:
    return relative_error(grad, central_difference(f, x, tol("fd_step")))


def suite_grads(seed: int = 0, points: int = 20) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    quad = quadratic_objective(a=3.0, n=6, r=2)
    mlp = mlp_objective((5, 4, 2), n_samples=16, seed=seed)
    err = {"quadratic": 0.0, "mlp": 0.0, "lora_a": 0.0, "lora_b": 0.0, "spec_u": 0.0, "spec_xi": 0.0, "spec_v": 0.0}
    for _ in range(points):
        w = rng.standard_normal(quad.shape)
        err["quadratic"] = max(err["quadratic"], _fd_error(quad.loss, quad.full_grad(w), w))
        w = rng.standard_normal(mlp.shape)
        err["mlp"] = max(err["mlp"], _fd_error(mlp.loss, mlp.full_grad(w), w))
        w_t = rng.standard_normal(mlp.shape)
        a = rng.standard_normal((mlp.shape[0], 2))
        b = rng.standard_normal((2, mlp.shape[1]))
        g_a, g_b = lora_grads(mlp.full_grad(w_t + a @ b), AdapterPair(a, b))
        err["lora_a"] = max(err["lora_a"], _fd_error(lambda x: mlp.loss(w_t + x @ b), g_a, a))
        err["lora_b"] = max(err["lora_b"], _fd_error(lambda x: mlp.loss(w_t + a @ x), g_b, b))
        u = rng.standard_normal((mlp.shape[0], 2))
        xi = rng.standard_normal(2)
        v = rng.standard_normal((2, mlp.shape[1]))
        g_u, g_xi, g_v = spectral_grads(mlp.full_grad(w_t + (u * xi) @ v), SpectralAdapter(u, xi, v))
        err["spec_u"] = max(err["spec_u"], _fd_error(lambda x: mlp.loss(w_t + (x * xi) @ v), g_u, u))
        err["spec_xi"] = max(err["spec_xi"], _fd_error(lambda x: mlp.loss(w_t + (u * x) @ v), g_xi, xi))
        err["spec_v"] = max(err["spec_v"], _fd_error(lambda x: mlp.loss(w_t + (u * xi) @ x), g_v, v))
    return [_le("grads", f"fd_{k}", e, tol("fd_relative")) for k, e in err.items()]


def suite_restart_identity(seed: int = 0, samples: int = 500) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    ident = pyth = smooth = 0.0
    for m, n in _shapes(rng, samples, 2, 10):
        # absolute bound: unit-scale gradients, gamma in [1/2, 16]
        g = rng.standard_normal((m, n))
        r = int(rng.integers(1, min(m, n) + 1))
        gamma = float(2.0 ** rng.uniform(-1, 4))
        ad = restart_adapters_from_gradient(g, r, gamma)
        ident = max(ident, np.linalg.norm(ad.product() + svd_top_r(g, r).reconstruct() / gamma))
        f = svd_top_r(g, r)
        proj = project_svd_subspace(g, f.u, f.vt)
        total = float(np.sum(g * g))
        pyth = max(pyth, abs(total - np.sum(proj**2) - np.sum((g - proj) ** 2)) / total)
        a = rng.standard_normal((m, r))
        b = rng.standard_normal((r, n))
        res = smooth_restart(AdapterPair(a, b), g, SmoothingConfig())
        smooth = max(smooth, np.linalg.norm(res.adapter.product() - res.u_ema @ res.core @ res.v_ema.T))
    return [
        _le("restart-identity", "restart_realizes_projected_step", ident, tol("restart_identity")),
        _le("restart-identity", "pythagorean_split", pyth, tol("pythagoras")),
        _le("restart-identity", "smoothing_core_identity", smooth, tol("smooth_identity")),
    ]


def theory_config(frequency: int, total_steps: int, **extra) -> PesoConfig:
    """Restarts at eta = 1/L and plain gradient descent at 1/L on the subspace
    coordinates, for the L = 2 quadratic."""
    fields = dict(
        total_steps=total_steps,
        frequency=frequency,
        rank=3,
        gamma=2.0,
        optimizer="sgd",
        coordinates="core",
        lr=LrSchedule("constant", 0.5),
    )
    fields.update(extra)
    return PesoConfig(**fields)


def suite_descent(steps: int = 2000, frequencies=(1, 5, 20)) -> list[CheckResult]:
    obj = quadratic_objective()
    half_inv_l = 0.5 / obj.lipschitz
    out = []
    for K in frequencies:
        res = run_peso_lora_r(obj, theory_config(K, steps))
        out.append(_le("descent", f"violations_K{K}", res.summary.descent_violations, 0))
        gap = max(
            half_inv_l * rec.proj_norm**2 - (rec.loss_before - rec.loss_after) for rec in res.restarts
        )
        out.append(_le("descent", f"bracket_K{K}", gap, tol("bracket"), "max (1/2L)||P_S G||^2 - decrease"))
    return out


def suite_exact_convergence(steps: int = 10000) -> list[CheckResult]:
    res = run_peso_lora_r(quadratic_objective(), theory_config(5, steps))
    s = res.summary
    return [
        _le("exact-convergence", "min_grad_norm", s.min_grad_norm, tol("exact_convergence"), f"at step {s.argmin_step}")
    ]


@dataclass(frozen=True)
class StochasticStats:
    running_min: float
    terminal_delta: float
    per_seed: list

    @property
    def holds(self) -> bool:
        return self.running_min <= self.terminal_delta + tol("stochastic_margin")


def stochastic_restart_stats(seeds=range(10), steps: int = 2000, frequency: int = 1, eta0: float = 0.5, noise: float = 1.0):
    obj = quadratic_objective()
    per_seed = []
    for seed in seeds:
        cfg = theory_config(
            frequency,
            steps,
            restart_lr=LrSchedule("diminishing", eta0),
            noise=NoiseModel(noise, seed),
            seed=seed,
            optimizer="none",
        )
        res = run_peso_lora_r(obj, cfg)
        per_seed.append((seed, res.min_restart_grad_norm, res.summary.terminal_delta))
    running = float(np.mean([p[1] for p in per_seed]))
    delta = float(np.mean([p[2] for p in per_seed]))
    return StochasticStats(running, delta, per_seed)


def suite_stochastic_restarts(**kwargs) -> list[CheckResult]:
    st = stochastic_restart_stats(**kwargs)
    return [
        _le(
            "stochastic-restarts",
            "running_min_vs_terminal_delta",
            st.running_min,
            st.terminal_delta + tol("stochastic_margin"),
            f"mean min ||G_k|| = {st.running_min:.6g}, terminal delta = {st.terminal_delta:.6g}",
        )
    ]


def suite_schedule() -> list[CheckResult]:
    sched = Beta2Warmup(0.95, 0.999, 30, 7)
    values = [beta2_at(sched, t) for t in range(7, 7 + 31)]
    mono = max(max(a - b for a, b in zip(values, values[1:])), 0.0)
    lr = LrSchedule("diminishing", 1.0)
    n = 10**6
    k = np.arange(1, n + 1, dtype=np.float64)
    partial_sq = float(np.sum((1.0 / k) ** 2))
    return [
        _le("schedule", "beta2_start", abs(values[0] - 0.95), 0.0),
        _le("schedule", "beta2_end", abs(values[-1] - 0.999), 0.0),
        _le("schedule", "beta2_midpoint", abs(values[15] - 0.9745), tol("beta2_midpoint")),
        _le("schedule", "beta2_monotone_drop", mono, 0.0),
        _le("schedule", "diminishing_sq_sum_gap", abs(partial_sq - math.pi**2 / 6), 1.0 / (n - 1)),
        _le("schedule", "diminishing_first_value", abs(lr(1) - 1.0), 0.0),
    ]


def suite_alignment(seed: int = 0, samples: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_v = worst_m = 0.0
    for _ in range(samples):
        sa = AdamState(rng.standard_normal((6, 2)), rng.random((6, 2)), step=5)
        sb = AdamState(rng.standard_normal((2, 5)), rng.random((2, 5)), step=5)
        g_a = rng.standard_normal((6, 2)) * 3.0
        g_b = rng.standard_normal((2, 5)) * 0.1
        t_a = rng.standard_normal((2, 2))
        t_b = rng.standard_normal((2, 2))
        align_states_after_restart(sa, sb, g_a, g_b, t_a, t_b, window=10)
        for st, g in ((sa, g_a), (sb, g_b)):
            worst_v = max(worst_v, abs(rms_norm(st.v) - rms_norm(g) ** 2) / rms_norm(g) ** 2)
            worst_m = max(worst_m, abs(rms_norm(st.m) - rms_norm(g)) / rms_norm(g))
    return [
        _le("alignment", "rms_v_matches_g_squared", worst_v, tol("alignment")),
        _le("alignment", "rms_m_matches_g", worst_m, tol("alignment")),
    ]


def suite_galore(steps: int = 500) -> list[CheckResult]:
    obj = mlp_objective((6, 5, 2), n_samples=24, seed=1)
    m = obj.shape[0]
    lr = 0.2
    cfg = PesoConfig(total_steps=steps, frequency=1, rank=m, optimizer="sgd", lr=LrSchedule("constant", lr))
    res = run_galore_baseline(obj, cfg)
    w = obj.initial_point()
    for _ in range(steps):
        w = w - lr * obj.full_grad(w)
    traj = float(np.abs(res.w - w).max())

    method = ProjectedMethod(obj, PesoConfig(total_steps=50, frequency=7, rank=2, optimizer="sgd", lr=LrSchedule("constant", lr)))
    method.keep_steps = True
    method.run()
    step_err = 0.0
    ws = [s[0] for s in method.steps] + [method.w]
    for (w_k, g, p, eta), w_next in zip(method.steps, ws[1:]):
        step_err = max(step_err, float(np.abs(w_next - (w_k - eta * p.p @ p.p.T @ g)).max()))
    return [
        _le("galore", "full_rank_equals_sgd", traj, tol("galore")),
        _le("galore", "per_step_projected_update", step_err, tol("galore")),
    ]


def suite_determinism() -> list[CheckResult]:
    obj = quadratic_objective()
    cfg = PesoConfig(
        total_steps=300,
        frequency=25,
        rank=3,
        gamma=2.0,
        smoothing=SmoothingConfig(),
        alignment=True,
        noise=NoiseModel(0.5, 3),
    )
    first = run_peso_lora_r(obj, cfg).trace.dumps()
    second = run_peso_lora_r(obj, cfg).trace.dumps()
    return [_le("determinism", "trace_bytes_differ", float(first != second), 0.0)]


SUITES: dict[str, Callable[[], list[CheckResult]]] = {
    "linalg": suite_linalg,
    "procrustes": suite_procrustes,
    "grads": suite_grads,
    "restart-identity": suite_restart_identity,
    "alignment": suite_alignment,
    "schedule": suite_schedule,
    "galore": suite_galore,
    "descent": suite_descent,
    "exact-convergence": suite_exact_convergence,
    "stochastic-restarts": suite_stochastic_restarts,
    "determinism": suite_determinism,
}


def run_suites(names) -> list[CheckResult]:
    results = []
    for name in names:
        results.extend(SUITES[name]())
    return results
