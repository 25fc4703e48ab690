"""Subspace bookkeeping: anchored weights, adapters, projections and restarts."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import ParameterError
from .linalg import orthogonal_procrustes, polar_refactor, qr_thin, svd_top_r
from .tolerances import tol


@dataclass(frozen=True)
class AnchoredState:
    """Accumulated baseline ``w_tilde = origin + sum(absorbed increments)``.

    With ``debug`` on, a separately summed shadow of the increments is
    carried and the invariant is asserted after every absorb.
    """

    w_tilde: np.ndarray
    origin: np.ndarray
    shadow: Optional[np.ndarray] = None
    debug: bool = False

    @classmethod
    def start(cls, w0, debug: bool = False) -> "AnchoredState":
        w0 = np.array(w0, dtype=np.float64)
        w0.setflags(write=False)
        return cls(w0.copy(), w0, np.zeros_like(w0) if debug else None, debug)

    def check(self) -> float:
        if self.shadow is None:
            return 0.0
        err = float(np.abs(self.w_tilde - (self.origin + self.shadow)).max())
        scale = max(1.0, float(np.abs(self.w_tilde).max()))
        if err > tol("absorb") * scale:
            raise AssertionError(f"anchored state drifted from its shadow sum by {err:.3e}")
        return err


def absorb(anchored: AnchoredState, increment) -> AnchoredState:
    increment = np.asarray(increment, dtype=np.float64)
    if increment.shape != anchored.w_tilde.shape:
        raise ParameterError(f"increment shape {increment.shape} != {anchored.w_tilde.shape}")
    shadow = None if anchored.shadow is None else anchored.shadow + increment
    new = replace(anchored, w_tilde=anchored.w_tilde + increment, shadow=shadow)
    if new.debug:
        new.check()
    return new


@dataclass
class AdapterPair:
    a: np.ndarray  # m x r
    b: np.ndarray  # r x n
    gamma: float = 1.0
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.a.ndim != 2 or self.b.ndim != 2 or self.a.shape[1] != self.b.shape[0]:
            raise ParameterError(f"incompatible adapter factors {self.a.shape} and {self.b.shape}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    def product(self) -> np.ndarray:
        return self.a @ self.b

    @classmethod
    def zeros(cls, m: int, n: int, r: int, gamma: float = 1.0) -> "AdapterPair":
        return cls(np.zeros((m, r)), np.zeros((r, n)), gamma)


@dataclass
class SpectralAdapter:
    u: np.ndarray  # m x r
    xi: np.ndarray  # r
    v: np.ndarray  # r x n

    def increment(self) -> np.ndarray:
        return (self.u * self.xi) @ self.v


@dataclass(frozen=True)
class ProjectedSubspace:
    p: np.ndarray  # m x r, orthonormal columns

    def __post_init__(self):
        _require_orthonormal(self.p, "p")


@dataclass(frozen=True)
class SmoothingConfig:
    tau1: float = 0.9  # basis EMA weight on the old basis
    tau2: float = 0.9  # core EMA weight on the old adapter

    def __post_init__(self):
        for name in ("tau1", "tau2"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {value}")


def _require_orthonormal(x: np.ndarray, name: str) -> None:
    gram = x.T @ x
    err = float(np.abs(gram - np.eye(gram.shape[0])).max())
    if err > tol("orthogonality"):
        raise ParameterError(f"{name} is not orthonormal (max Gram error {err:.2e})")


def project_svd_subspace(g, u, v) -> np.ndarray:
    """Orthogonal projection of ``g`` onto ``{u C v : C}``: ``u u^T g v^T v``."""
    g = np.asarray(g, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape[0] != g.shape[0] or v.shape[1] != g.shape[1]:
        raise ParameterError(f"basis shapes {u.shape}, {v.shape} do not match g {g.shape}")
    _require_orthonormal(u, "u")
    _require_orthonormal(v.T, "v")
    return u @ ((u.T @ g @ v.T) @ v)


def subspace_distance(g, projection) -> float:
    return float(np.linalg.norm(np.asarray(g) - np.asarray(projection)))


def _check_rank(g: np.ndarray, r: int) -> None:
    p = min(g.shape)
    if not 1 <= r <= p:
        raise ParameterError(f"rank must lie in [1, {p}], got {r}")


def restart_adapters_from_gradient(g, r: int, gamma: float) -> AdapterPair:
    """Adapters realizing the projected step ``-(1/gamma) * P_r(g)``.

    With ``-g ~ U L V`` the top-r SVD, ``A = U sqrt(L) / sqrt(gamma)`` and
    ``B = sqrt(L) V / sqrt(gamma)``. A zero gradient yields zero adapters
    flagged ``degenerate``.
    """
    g = np.asarray(g, dtype=np.float64)
    _check_rank(g, r)
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if not np.any(g):
        m, n = g.shape
        return AdapterPair(np.zeros((m, r)), np.zeros((r, n)), gamma, ("degenerate",))
    f = svd_top_r(-g, r)
    root = np.sqrt(f.sigma / gamma)
    return AdapterPair(f.u * root, root[:, None] * f.vt, gamma)


def _numerical_rank(sigma: np.ndarray) -> int:
    if sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > sigma[0] * len(sigma) * np.finfo(np.float64).eps * 16))


def muon_style_restart(g, r: int, eta: float) -> np.ndarray:
    """Increment ``-eta * U_r V_r`` with unit spectrum on the numerical rank of ``g``."""
    g = np.asarray(g, dtype=np.float64)
    _check_rank(g, r)
    if not eta > 0:
        raise ParameterError(f"eta must be positive, got {eta}")
    if not np.any(g):
        return np.zeros_like(g)
    f = svd_top_r(g, r)
    k = _numerical_rank(f.sigma)
    return -eta * (f.u[:, :k] @ f.vt[:k])


class SmoothRestart(NamedTuple):
    adapter: AdapterPair
    t_a: np.ndarray
    t_b: np.ndarray
    u_ema: np.ndarray
    v_ema: np.ndarray
    core: np.ndarray
    flags: tuple[str, ...]


def smooth_restart(adapter: AdapterPair, g, cfg: SmoothingConfig = SmoothingConfig()) -> SmoothRestart:
    """Restart blended with the current adapter through aligned, averaged bases.

    Steps: thin QR of both factors; top-r SVD of ``-g``; Procrustes-align the
    new bases to the old; EMA the bases (``tau1``); blend the old product and
    the negative gradient in the averaged bases (``tau2``); split the core
    evenly between the factors. ``t_a``/``t_b`` carry momenta into the new
    bases. An all-zero adapter has no bases to align and falls back to the
    plain gradient restart (``t_a = t_b = I``).
    """
    g = np.asarray(g, dtype=np.float64)
    a, b = adapter.a, adapter.b
    r = adapter.rank
    if g.shape != (a.shape[0], b.shape[1]):
        raise ParameterError(f"gradient shape {g.shape} does not match adapter {a.shape} x {b.shape}")
    _check_rank(g, r)
    eye = np.eye(r)
    if not np.any(a) or not np.any(b):
        plain = restart_adapters_from_gradient(g, r, adapter.gamma)
        flags = ("fallback",) + plain.flags
        if "degenerate" in plain.flags:
            bases = qr_thin(np.eye(g.shape[0], r)).q, qr_thin(np.eye(g.shape[1], r)).q
            core = np.zeros((r, r))
        else:
            f = svd_top_r(-g, r)
            bases = f.u, f.vt.T
            core = np.diag(f.sigma / adapter.gamma)
        return SmoothRestart(replace(plain, flags=flags), eye, eye, bases[0], bases[1], core, flags)

    flags: list[str] = []
    qa = qr_thin(a)
    qb = qr_thin(b.T)  # b = r_b^T q_b^T
    if qa.rank_deficient or qb.rank_deficient:
        flags.append("rank_deficient_qr")
    q_a, q_b = qa.q, qb.q

    f = svd_top_r(-g, r)
    u_new, v_new = f.u, f.vt.T
    align_u = orthogonal_procrustes(u_new, q_a)
    align_v = orthogonal_procrustes(v_new, q_b)
    if align_u.degenerate or align_v.degenerate:
        flags.append("degenerate_alignment")
    u_hat = u_new @ align_u.rotation.T
    v_hat = v_new @ align_v.rotation.T

    u_ema = cfg.tau1 * q_a + (1.0 - cfg.tau1) * u_hat
    v_ema = cfg.tau1 * q_b + (1.0 - cfg.tau1) * v_hat
    core = cfg.tau2 * (u_ema.T @ (a @ b) @ v_ema) - (1.0 - cfg.tau2) * (u_ema.T @ g @ v_ema)

    pf = polar_refactor(core)
    if pf.sigma[-1] == 0.0:
        flags.append("rank_collapsed_core")
    root = np.sqrt(pf.sigma)
    a_new = (u_ema @ pf.r_l) * root
    b_new = root[:, None] * (pf.r_r.T @ v_ema.T)
    t_a = q_a.T @ u_ema
    t_b = q_b.T @ v_ema
    new = AdapterPair(a_new, b_new, adapter.gamma, tuple(flags))
    return SmoothRestart(new, t_a, t_b, u_ema, v_ema, core, tuple(flags))


def galore_step(w, g, p: ProjectedSubspace, eta: float) -> np.ndarray:
    """Projected subspace descent ``w - eta * p p^T g``."""
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if w.shape != g.shape or p.p.shape[0] != g.shape[0]:
        raise ParameterError(f"shape mismatch: w {w.shape}, g {g.shape}, p {p.p.shape}")
    return w - eta * (p.p @ (p.p.T @ g))


def left_subspace(g, r: int) -> ProjectedSubspace:
    """Left rank-``r`` singular subspace of ``g``."""
    return ProjectedSubspace(svd_top_r(np.asarray(g, dtype=np.float64), r).u)
