"""Dense factorizations used by the restart and smoothing procedures.

Matrices are plain 2-D ``float64`` numpy arrays. All functions are pure: they
never modify their inputs.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..errors import ConvergenceError, ParameterError
from ..tolerances import tol
from . import _jacobi

MAX_SWEEPS = 60
_EPS = np.finfo(np.float64).eps


class SvdFactors(NamedTuple):
    u: np.ndarray  # m x k, orthonormal columns
    sigma: np.ndarray  # k, non-increasing, >= 0
    vt: np.ndarray  # k x n, orthonormal rows

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


class ThinQR(NamedTuple):
    q: np.ndarray
    r: np.ndarray
    rank_deficient: bool


class Alignment(NamedTuple):
    rotation: np.ndarray
    degenerate: bool


class PolarFactors(NamedTuple):
    r_l: np.ndarray
    sigma: np.ndarray
    r_r: np.ndarray


def as_matrix(a, name: str = "a") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


def _complete_basis(q: np.ndarray, filled: np.ndarray) -> None:
    """Fill the columns of ``q`` not marked in ``filled`` with unit vectors
    orthogonal to every filled column, drawn from the standard basis."""
    m = q.shape[0]
    candidate = 0
    for j in np.flatnonzero(~filled):
        while True:
            if candidate >= m:
                raise ParameterError("cannot complete an orthonormal basis: more columns than rows")
            e = np.zeros(m)
            e[candidate] = 1.0
            candidate += 1
            basis = q[:, filled]
            for _ in range(2):
                e -= basis @ (basis.T @ e)
            norm = np.linalg.norm(e)
            if norm > 0.5:
                q[:, j] = e / norm
                filled[j] = True
                break


def qr_thin(a) -> ThinQR:
    """Thin QR by twice-iterated modified Gram-Schmidt.

    ``r`` has a non-negative diagonal. A column that is (numerically) in the
    span of its predecessors gets ``r[j, j] = 0`` and its ``q`` column is
    replaced by an orthonormal completion vector; ``rank_deficient`` is then set.
    """
    a = as_matrix(a)
    m, r = a.shape
    if m < r:
        raise ParameterError(f"qr_thin needs rows >= cols, got {a.shape}")
    q = np.zeros((m, r))
    rf = np.zeros((r, r))
    filled = np.zeros(r, dtype=bool)
    col_norms = np.linalg.norm(a, axis=0)
    for j in range(r):
        w = a[:, j].copy()
        for _ in range(2):
            for i in range(j):
                if not filled[i]:
                    continue
                h = q[:, i] @ w
                w -= h * q[:, i]
                rf[i, j] += h
        norm = np.linalg.norm(w)
        if col_norms[j] == 0.0 or norm <= 1e-12 * col_norms[j]:
            continue
        q[:, j] = w / norm
        rf[j, j] = norm
        filled[j] = True
    deficient = not filled.all()
    if deficient:
        _complete_basis(q, filled)
    return ThinQR(q, rf, deficient)


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> None:
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    vt[flip, :] *= -1.0


def _svd_tall(a: np.ndarray) -> SvdFactors:
    m, n = a.shape
    # unit max-abs scaling keeps squared column norms clear of under/overflow
    scale = float(np.abs(a).max())
    w = np.array(a.T, order="C", copy=True)  # rows = columns of a; rotated in place
    if scale > 0.0:
        w /= scale
    v = np.eye(n)
    jacobi_tol = max(math.sqrt(m), 2.0) * _EPS
    sweeps, off = _jacobi.jacobi_sweeps(w, v, jacobi_tol, MAX_SWEEPS)
    if sweeps > MAX_SWEEPS:
        raise ConvergenceError(f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps", off)
    sigma = np.sqrt(np.einsum("ij,ij->i", w, w))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[order]
    v = v[order]
    u = np.zeros((m, n))
    smax = sigma[0] if n else 0.0
    filled = sigma > smax * n * _EPS
    if smax == 0.0:
        filled[:] = False
    u[:, filled] = (w[filled] / sigma[filled, None]).T
    if not filled.all():
        _complete_basis(u, filled)
    vt = v  # rows of v are the right singular vectors
    _fix_signs(u, vt)
    if scale > 0.0:
        sigma = sigma * scale
    return SvdFactors(u, sigma, vt)


def svd_full(a) -> SvdFactors:
    """Thin SVD with ``k = min(m, n)`` via one-sided Jacobi.

    Singular values are non-increasing (ties keep Jacobi order); each left
    vector has its largest-magnitude entry positive.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m >= n:
        return _svd_tall(a)
    t = _svd_tall(a.T)
    # a = (t.u S t.vt)^T = t.vt^T S t.u^T
    u = np.ascontiguousarray(t.vt.T)
    vt = np.ascontiguousarray(t.u.T)
    _fix_signs(u, vt)
    return SvdFactors(u, t.sigma, vt)


def svd_top_r(a, r: int) -> SvdFactors:
    a = as_matrix(a)
    p = min(a.shape)
    if not isinstance(r, (int, np.integer)) or not 1 <= r <= p:
        raise ParameterError(f"rank r must be an integer in [1, {p}], got {r!r}")
    f = svd_full(a)
    return SvdFactors(f.u[:, :r].copy(), f.sigma[:r].copy(), f.vt[:r].copy())


def _check_orthonormal_columns(x: np.ndarray, name: str) -> None:
    k = x.shape[1]
    err = np.abs(x.T @ x - np.eye(k)).max()
    if err > tol("orthogonality"):
        raise ParameterError(f"{name} does not have orthonormal columns (max error {err:.2e})")


def orthogonal_procrustes(source, target) -> Alignment:
    """Rotation ``R`` (r x r) with ``source @ R.T`` the closest rotation of
    ``source`` to ``target``.

    From ``target.T @ source = P S Q^T``, ``R = P Q^T``. When the cross product
    is rank deficient the null block is resolved by the deterministic basis
    completion of the SVD (identity when the cross product vanishes) and
    ``degenerate`` is set.
    """
    source = as_matrix(source, "source")
    target = as_matrix(target, "target")
    if source.shape != target.shape:
        raise ParameterError(f"shape mismatch {source.shape} vs {target.shape}")
    _check_orthonormal_columns(source, "source")
    _check_orthonormal_columns(target, "target")
    cross = target.T @ source
    f = svd_full(cross)
    smax = f.sigma[0]
    degenerate = bool(smax == 0.0 or f.sigma[-1] <= smax * cross.shape[0] * 1e3 * _EPS)
    return Alignment(f.u @ f.vt, degenerate)


def polar_refactor(s) -> PolarFactors:
    """``s = r_l @ diag(sigma) @ r_r.T`` with orthogonal ``r_l``, ``r_r``.

    Named after the refactorization step it serves; computed as the SVD of
    the square core.
    """
    s = as_matrix(s, "s")
    if s.shape[0] != s.shape[1]:
        raise ParameterError(f"core must be square, got {s.shape}")
    f = svd_full(s)
    return PolarFactors(f.u, f.sigma, f.vt.T.copy())


def rms_norm(a) -> float:
    arr = np.asarray(a, dtype=np.float64)
    if arr.size == 0:
        raise ParameterError("rms_norm of an empty matrix")
    return float(math.sqrt(np.mean(arr * arr)))


def write_matrix_csv(path, a) -> None:
    """Row-major CSV: a ``rows,cols`` header line, then one line per row."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        fh.write(f"{a.shape[0]},{a.shape[1]}\n")
        for row in a:
            fh.write(",".join(format(float(x), ".17g") for x in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        rows, cols = (int(x) for x in next(reader))
        data = [[float(x) for x in line] for line in reader if line]
    a = np.array(data, dtype=np.float64).reshape(rows, cols)
    return a
