from ._jacobi import BACKEND
from .decomp import (
    Alignment,
    PolarFactors,
    SvdFactors,
    ThinQR,
    as_matrix,
    orthogonal_procrustes,
    polar_refactor,
    qr_thin,
    read_matrix_csv,
    rms_norm,
    svd_full,
    svd_top_r,
    write_matrix_csv,
)

__all__ = [
    "BACKEND",
    "Alignment",
    "PolarFactors",
    "SvdFactors",
    "ThinQR",
    "as_matrix",
    "orthogonal_procrustes",
    "polar_refactor",
    "qr_thin",
    "read_matrix_csv",
    "rms_norm",
    "svd_full",
    "svd_top_r",
    "write_matrix_csv",
]
