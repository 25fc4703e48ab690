"""One-sided (Hestenes) Jacobi sweeps.

Two interchangeable kernels share one contract: ``w`` holds the columns of the
working matrix as *rows* (shape ``(n, m)``), ``v`` accumulates the right
rotations the same way (shape ``(n, n)``). Both are rotated in place until
every pair of rows of ``w`` is orthogonal to ``tol`` relative accuracy.

The numba kernel is used when numba imports and ``PESOKIT_DISABLE_NUMBA`` is
unset (or ``0``); otherwise the pure-numpy kernel runs. Within one backend the
result is bit-reproducible; across backends it agrees to rounding.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLED = os.environ.get("PESOKIT_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

# |zeta| above this would overflow zeta*zeta
_ZETA_BIG = 1e150


def _rotation(alpha: float, beta: float, gamma: float) -> tuple[float, float]:
    zeta = (beta - alpha) / (2.0 * gamma)
    if abs(zeta) > _ZETA_BIG:
        t = 0.5 / zeta
    else:
        t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
    c = 1.0 / math.sqrt(1.0 + t * t)
    return c, c * t


def jacobi_sweeps_numpy(w: np.ndarray, v: np.ndarray, tol: float, max_sweeps: int) -> tuple[int, float]:
    """Pure-numpy kernel. Returns ``(sweeps_used, last_off)``; ``sweeps_used > max_sweeps`` means no convergence."""
    n = w.shape[0]
    off = 0.0
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        off = 0.0
        for i in range(n - 1):
            wi = w[i]
            for j in range(i + 1, n):
                wj = w[j]
                gamma = float(np.dot(wi, wj))
                if gamma == 0.0:
                    continue
                alpha = float(np.dot(wi, wi))
                beta = float(np.dot(wj, wj))
                denom = math.sqrt(alpha) * math.sqrt(beta)
                if denom == 0.0:
                    continue
                ratio = abs(gamma) / denom
                if ratio > off:
                    off = ratio
                if ratio <= tol:
                    continue
                rotated = True
                c, s = _rotation(alpha, beta, gamma)
                a = wi.copy()
                wi *= c
                wi -= s * wj
                wj *= c
                wj += s * a
                a = v[i].copy()
                v[i] *= c
                v[i] -= s * v[j]
                v[j] *= c
                v[j] += s * a
        if not rotated:
            return sweep, off
    return max_sweeps + 1, off


def _jacobi_sweeps_loops(w, v, tol, max_sweeps):
    n, m = w.shape
    nv = v.shape[1]
    off = 0.0
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for p in range(m):
                    x = w[i, p]
                    y = w[j, p]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                if gamma == 0.0:
                    continue
                denom = math.sqrt(alpha) * math.sqrt(beta)
                if denom == 0.0:
                    continue
                ratio = abs(gamma) / denom
                if ratio > off:
                    off = ratio
                if ratio <= tol:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for p in range(m):
                    x = w[i, p]
                    y = w[j, p]
                    w[i, p] = c * x - s * y
                    w[j, p] = s * x + c * y
                for p in range(nv):
                    x = v[i, p]
                    y = v[j, p]
                    v[i, p] = c * x - s * y
                    v[j, p] = s * x + c * y
        if not rotated:
            return sweep, off
    return max_sweeps + 1, off


jacobi_sweeps_numba = None
if not _DISABLED:
    try:
        import numba

        jacobi_sweeps_numba = numba.njit(cache=True, nogil=True)(_jacobi_sweeps_loops)
    except ImportError:  # pragma: no cover - numba is an optional accelerator
        jacobi_sweeps_numba = None

BACKEND = "numba" if jacobi_sweeps_numba is not None else "numpy"
jacobi_sweeps = jacobi_sweeps_numba if jacobi_sweeps_numba is not None else jacobi_sweeps_numpy
