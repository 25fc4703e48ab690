from __future__ import annotations

import numpy as np


class ParameterError(ValueError):
    """Invalid argument: bad shape, rank out of range, non-positive scale, ..."""


class NonFiniteError(FloatingPointError):
    """A gradient or loss contained NaN/Inf."""


class ConvergenceError(np.linalg.LinAlgError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual
