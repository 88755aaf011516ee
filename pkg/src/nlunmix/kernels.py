"""Polynomial kernel and the Gram matrix over endmember rows.

The nonlinear mixing term in each pixel is modeled as a function in the
reproducing-kernel Hilbert space of the polynomial kernel, evaluated at the
rows of the endmember matrix.  Every function in play is a combination
psi = sum_l beta_l k(., m_l), so all solvers only ever need the (L, L) Gram
matrix K[i, j] = k(m_i, m_j) between endmember rows, which is computed once
per endmember set and shared by every pixel's QP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import EndmemberMatrix


@dataclass(frozen=True)
class KernelConfig:
    """Polynomial kernel (u'v + offset)^degree; defaults degree=2, offset=1."""

    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError("degree must be an integer >= 1")
        if self.offset < 0:
            raise ValueError("offset must be nonnegative")


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric PSD kernel matrix over the endmember rows."""

    K: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        object.__setattr__(self, "K", K)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError("Gram matrix must be square")
        if np.abs(K - K.T).max(initial=0.0) > 1e-10:
            raise ValueError("Gram matrix is not symmetric")

    @property
    def size(self) -> int:
        return self.K.shape[0]


def poly_kernel(u, v, cfg: KernelConfig = KernelConfig()) -> float:
    """Evaluate the polynomial kernel on two vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float((u @ v + cfg.offset) ** cfg.degree)


def gram_matrix(M, cfg: KernelConfig = KernelConfig()) -> GramMatrix:
    """Kernel matrix between the rows of the endmember matrix.

    Accepts an EndmemberMatrix or a raw (L, P) array.  The inner-product
    matrix is symmetrized before the elementwise power so the result is
    symmetric to the last bit.
    """
    A = M.M if isinstance(M, EndmemberMatrix) else np.asarray(M, dtype=np.float64)
    G = A @ A.T
    G = 0.5 * (G + G.T)
    K = (G + cfg.offset) ** cfg.degree
    return GramMatrix(K)


def eval_nonlinear(K: GramMatrix, beta: np.ndarray) -> np.ndarray:
    """Values at the endmember rows of the RKHS function with coefficient
    vector beta: returns K @ beta.  beta may be a matrix of columns."""
    return K.K @ np.asarray(beta, dtype=np.float64)


def rkhs_norm_sq(K: GramMatrix, beta: np.ndarray) -> float:
    """Squared RKHS norm beta' K beta of the function with coefficients beta."""
    b = np.asarray(beta, dtype=np.float64)
    return float(b @ (K.K @ b))
