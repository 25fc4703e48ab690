"""Desk-scale objectives over a single weight matrix, with hand-derived gradients."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError
from .linalg import write_matrix_csv


class Objective:
    """Smooth loss ``l(W)`` over an ``m x n`` matrix.

    Subclasses provide ``loss`` and ``full_grad``; ``lipschitz`` is the
    gradient Lipschitz constant when known analytically, else ``None``.
    """

    shape: tuple[int, int]
    lipschitz: Optional[float] = None

    def loss(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def full_grad(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.shape)

    def _check(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != self.shape:
            raise ParameterError(f"expected W of shape {self.shape}, got {w.shape}")
        return w


class QuadraticObjective(Objective):
    """``||W - M||_F^2`` with ``M = a * diag(1, ..., 1, 0, ..., 0)`` holding ``r + 1`` ones.

    A rank-``r`` adapter can reach at best loss ``a**2`` here.
    """

    lipschitz = 2.0

    def __init__(self, a: float = 10.0, n: int = 16, r: int = 3):
        if not a > 0:
            raise ParameterError(f"a must be positive, got {a}")
        if r < 0 or n < r + 1:
            raise ParameterError(f"need n >= r + 1 (n={n}, r={r})")
        self.a = float(a)
        self.n = int(n)
        self.r = int(r)
        self.shape = (self.n, self.n)
        diag = np.zeros(self.n)
        diag[: self.r + 1] = self.a
        self.target = np.diag(diag)

    def loss(self, w):
        d = self._check(w) - self.target
        return float(np.sum(d * d))

    def full_grad(self, w):
        return 2.0 * (self._check(w) - self.target)

    @property
    def lora_floor(self) -> float:
        return self.a**2


def quadratic_objective(a: float = 10.0, n: int = 16, r: int = 3) -> QuadraticObjective:
    return QuadraticObjective(a, n, r)


class MLPObjective(Objective):
    """Two-layer tanh regression; only the first-layer weight is trainable.

    ``loss(W) = ||tanh(X W^T) V^T - Y||_F^2 / (2N)`` with ``W`` of shape
    ``(hidden, inputs)`` and the read-out ``V`` frozen.
    """

    def __init__(self, x, y, v, w0=None):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 2 or self.v.ndim != 2:
            raise ParameterError("x, y, v must be 2-D")
        n_samples, d_in = self.x.shape
        d_out, hidden = self.v.shape
        if n_samples < 1 or d_in < 1 or hidden < 1 or d_out < 1:
            raise ParameterError("degenerate layer sizes")
        if self.y.shape != (n_samples, d_out):
            raise ParameterError(f"y must have shape {(n_samples, d_out)}, got {self.y.shape}")
        self.shape = (hidden, d_in)
        self._w0 = np.zeros(self.shape) if w0 is None else np.asarray(w0, dtype=np.float64)

    def initial_point(self):
        return self._w0.copy()

    def _forward(self, w):
        h = np.tanh(self.x @ self._check(w).T)
        return h, h @ self.v.T - self.y

    def loss(self, w):
        _, resid = self._forward(w)
        return float(np.sum(resid * resid) / (2.0 * self.x.shape[0]))

    def full_grad(self, w):
        h, resid = self._forward(w)
        dh = (resid @ self.v) / self.x.shape[0]
        dz = dh * (1.0 - h * h)
        return dz.T @ self.x


def mlp_objective(sizes=(8, 6, 3), n_samples: int = 64, seed: int = 0, noise: float = 0.01) -> MLPObjective:
    """Synthetic teacher-student regression set drawn from ``seed``.

    ``sizes`` is ``(inputs, hidden, outputs)``.
    """
    try:
        d_in, hidden, d_out = (int(s) for s in sizes)
    except (TypeError, ValueError):
        raise ParameterError(f"sizes must be three integers, got {sizes!r}") from None
    if min(d_in, hidden, d_out, n_samples) < 1:
        raise ParameterError(f"degenerate layer sizes {sizes} / samples {n_samples}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_samples, d_in))
    teacher = rng.standard_normal((hidden, d_in)) / np.sqrt(d_in)
    v = rng.standard_normal((d_out, hidden)) / np.sqrt(hidden)
    y = np.tanh(x @ teacher.T) @ v.T + noise * rng.standard_normal((n_samples, d_out))
    w0 = 0.5 * rng.standard_normal((hidden, d_in)) / np.sqrt(d_in)
    return MLPObjective(x, y, v, w0)


def dump_problem(objective: Objective, directory) -> list[Path]:
    """Write the problem data as matrix CSVs for fixture sharing."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(objective, QuadraticObjective):
        items = {"m.csv": objective.target}
    elif isinstance(objective, MLPObjective):
        items = {"x.csv": objective.x, "y.csv": objective.y, "v.csv": objective.v, "w0.csv": objective._w0}
    else:
        raise ParameterError(f"no dump format for {type(objective).__name__}")
    paths = []
    for name, mat in items.items():
        write_matrix_csv(out / name, mat)
        paths.append(out / name)
    return paths


def _check_shapes(g: np.ndarray, left: np.ndarray, right: np.ndarray, r: int) -> None:
    m, n = g.shape
    if left.shape != (m, r) or right.shape != (r, n):
        raise ParameterError(
            f"shape mismatch: g {g.shape}, left factor {left.shape}, right factor {right.shape} (rank {r})"
        )


def lora_grads(g, adapter) -> tuple[np.ndarray, np.ndarray]:
    """Chain rule through ``W = W_tilde + A @ B``: ``(g B^T, A^T g)``."""
    g = np.asarray(g, dtype=np.float64)
    a, b = adapter.a, adapter.b
    _check_shapes(g, a, b, a.shape[1] if a.ndim == 2 else -1)
    return g @ b.T, a.T @ g


def spectral_grads(g, adapter) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chain rule through ``W = W0 + U diag(xi) V``."""
    g = np.asarray(g, dtype=np.float64)
    u, xi, v = adapter.u, np.asarray(adapter.xi, dtype=np.float64), adapter.v
    r = xi.shape[0] if xi.ndim == 1 else -1
    _check_shapes(g, u, v, r)
    gv = g @ v.T  # m x r
    grad_u = gv * xi
    grad_xi = np.einsum("ij,ij->j", u, gv)
    grad_v = xi[:, None] * (u.T @ g)
    return grad_u, grad_xi, grad_v


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian gradient noise with total variance ``variance_bound``."""

    variance_bound: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variance_bound < 0:
            raise ParameterError(f"variance bound must be >= 0, got {self.variance_bound}")


def noisy_grad(g, noise: Optional[NoiseModel], k: int, stream: int = 0) -> np.ndarray:
    """``g`` plus zero-mean noise drawn from ``(seed, k, stream)``.

    Each entry gets variance ``C / (m n)``, so the total variance is ``C``.
    Draws depend only on the key, never on call order.
    """
    g = np.asarray(g, dtype=np.float64)
    if noise is None or noise.variance_bound == 0.0:
        return g.copy()
    rng = np.random.default_rng([noise.seed & 0xFFFFFFFFFFFFFFFF, int(k), int(stream)])
    scale = np.sqrt(noise.variance_bound / g.size)
    return g + scale * rng.standard_normal(g.shape)


def central_difference(f: Callable[[np.ndarray], float], x, step: float = 1e-5) -> np.ndarray:
    """Entrywise central-difference gradient of a scalar function."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(approx, exact) -> float:
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = max(np.linalg.norm(exact), np.linalg.norm(approx), 1e-300)
    return float(np.linalg.norm(approx - exact) / denom)
