"""Isotropic force/displacement matrices.

With stiffness ``k`` and Poisson-like coupling ``h`` the displacement produced
by a force is ``K_inv @ F`` with

    K_inv = (1/k) [[1, -h, -h], [-h, 1, -h], [-h, -h, 1]]

and its inverse ``K = k/(1 - h - 2h^2) [[1-h, h, h], [h, 1-h, h], [h, h, 1-h]]``.
Both have the form ``a*I + b*J`` (``J`` the all-ones matrix), which is what
:func:`apply_ab` exploits to multiply without BLAS.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class MaterialError(ValueError):
    pass


def _check(k: float, h: float) -> None:
    if not k > 0:
        raise MaterialError(f"stiffness k must be positive, got {k}")
    if not -1.0 < h < 0.5:
        warnings.warn(f"h={h} is outside the physical Poisson range (-1, 0.5)", stacklevel=3)


def singularity(h: float) -> float:
    return 1.0 - h - 2.0 * h * h


def compliance_coeffs(k: float, h: float) -> tuple[float, float]:
    """``(a, b)`` with ``K_inv = a*I + b*J``."""
    _check(k, h)
    return (1.0 + h) / k, -h / k


def stiffness_coeffs(k: float, h: float) -> tuple[float, float]:
    """``(a, b)`` with ``K = a*I + b*J``."""
    _check(k, h)
    s = singularity(h)
    if abs(s) <= 1e-12:
        raise MaterialError(f"h={h} makes the stiffness matrix singular (1 - h - 2h^2 = 0)")
    c = k / s
    return c * (1.0 - 2.0 * h), c * h


def compliance_matrix(k: float, h: float) -> np.ndarray:
    """Displacement per unit force, ``K_inv``."""
    _check(k, h)
    m = np.full((3, 3), -h)
    np.fill_diagonal(m, 1.0)
    return m / k


def stiffness_matrix(k: float, h: float) -> np.ndarray:
    """Force per unit displacement, ``K``."""
    _check(k, h)
    s = singularity(h)
    if abs(s) <= 1e-12:
        raise MaterialError(f"h={h} makes the stiffness matrix singular (1 - h - 2h^2 = 0)")
    m = np.full((3, 3), h)
    np.fill_diagonal(m, 1.0 - h)
    return (k / s) * m


def apply_ab(a, b, vecs: np.ndarray) -> np.ndarray:
    """Row-wise ``(a*I + b*J) @ v`` using elementwise arithmetic only.

    ``a`` and ``b`` may be scalars or per-row arrays. Negating ``vecs``
    negates the result bit-exactly, which keeps action/reaction force pairs
    exactly antisymmetric.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim:
        a = a[:, None]
        b = b[:, None]
    total = (vecs[:, 0] + vecs[:, 1]) + vecs[:, 2]
    return a * vecs + b * total[:, None]


@dataclass(frozen=True)
class MaterialMatrices:
    k: float
    h: float

    @property
    def K(self) -> np.ndarray:
        return stiffness_matrix(self.k, self.h)

    @property
    def K_inv(self) -> np.ndarray:
        return compliance_matrix(self.k, self.h)
