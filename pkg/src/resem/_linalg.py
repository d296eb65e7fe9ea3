"""Symmetric-matrix helpers with an explicit conditioning policy.

Covariance matrices are never pseudo-inverted: if the ratio of extreme
eigenvalues exceeds ``cond_cap`` the caller gets a
:class:`~resem.errors.SingularDesignError` naming the block.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularDesignError

CONDITION_CAP = 1e12


def _checked_eigh(matrix: np.ndarray, block: str, cond_cap: float):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    values, vectors = np.linalg.eigh(matrix)
    top = values[-1]
    if not np.all(np.isfinite(values)) or top <= 0 or values[0] <= top / cond_cap:
        raise SingularDesignError(block, f"eigenvalues span [{values[0]:.3g}, {top:.3g}]")
    return values, vectors


def spd_inverse(matrix: np.ndarray, block: str = "covariates", cond_cap: float = CONDITION_CAP) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via its spectral factorization."""
    values, vectors = _checked_eigh(matrix, block, cond_cap)
    inverse = (vectors / values) @ vectors.T
    return (inverse + inverse.T) / 2


def spd_inverse_sqrt(matrix: np.ndarray, block: str = "covariates", cond_cap: float = CONDITION_CAP) -> np.ndarray:
    """Symmetric inverse square root ``A^{-1/2}``."""
    values, vectors = _checked_eigh(matrix, block, cond_cap)
    root = (vectors / np.sqrt(values)) @ vectors.T
    return (root + root.T) / 2


def batched_inverse_sqrt(matrices: np.ndarray, block: str = "covariates", cond_cap: float = CONDITION_CAP) -> np.ndarray:
    """``A^{-1/2}`` for a stack of symmetric matrices with shape (..., k, k)."""
    values, vectors = np.linalg.eigh(matrices)
    top = values[..., -1]
    if np.any(~np.isfinite(values)) or np.any(top <= 0) or np.any(values[..., 0] <= top / cond_cap):
        raise SingularDesignError(block, "a batched covariance is singular")
    return (vectors / np.sqrt(values)[..., None, :]) @ np.swapaxes(vectors, -1, -2)


def clamp_projection(value: float, scale: float = 1.0, tolerance: float = 1e-10) -> float:
    """Clamp tiny negative round-off in a variance to zero; reject real negatives."""
    if value >= 0:
        return float(value)
    if value >= -tolerance * max(1.0, scale):
        return 0.0
    raise ArithmeticError(f"projection variance is negative ({value:.3g})")
