"""Central table of numerical tolerances.

Every check in the library reads its threshold from ``TOLERANCES``; the
``check`` subcommand can override entries (``--tol name=value``) which is
how fault injection is exercised.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator, Mapping

DEFAULTS: dict[str, float] = {
    # factorizations
    "orthogonality": 1e-8,
    "reconstruction": 1e-10,
    "svd_reconstruction": 1e-9,  # relative to ||a||_F
    "eckart_young": 1e-8,  # relative
    "spectrum": 1e-8,  # relative, vs. eigen oracle
    "procrustes_margin": 1e-12,
    "lemma_slack": 1e-12,  # relative rounding slack on the truncation bound
    # gradients
    "fd_step": 1e-5,
    "fd_relative": 1e-6,
    # restart / subspace identities
    "restart_identity": 1e-10,
    "smooth_identity": 1e-9,
    "pythagoras": 1e-9,
    "absorb": 1e-9,
    # optimizer
    "alignment": 1e-10,
    "beta2_midpoint": 1e-12,
    "norm_guard": 1e-12,
    # drivers
    "descent": 1e-12,  # relative slack for the descent audit
    "bracket": 1e-9,
    "galore": 1e-12,
    "exact_convergence": 1e-6,
    "stochastic_margin": 0.5,
}

TOLERANCES: dict[str, float] = dict(DEFAULTS)


def tol(name: str) -> float:
    return TOLERANCES[name]


def set_tolerances(values: Mapping[str, float]) -> None:
    unknown = set(values) - set(DEFAULTS)
    if unknown:
        raise KeyError(f"unknown tolerance(s): {', '.join(sorted(unknown))}")
    TOLERANCES.update({k: float(v) for k, v in values.items()})


def reset_tolerances() -> None:
    TOLERANCES.clear()
    TOLERANCES.update(DEFAULTS)


@contextmanager
def overridden(values: Mapping[str, float]) -> Iterator[None]:
    saved = dict(TOLERANCES)
    set_tolerances(values)
    try:
        yield
    finally:
        TOLERANCES.clear()
        TOLERANCES.update(saved)
