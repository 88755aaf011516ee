"""Noise covariance estimation and the blind constraint constants.

The quadratic equality constraints of both unmixing stages are pinned to
constants with direct statistical meaning: C1 is the expected per-pixel
residual energy at the original scale, C0 its superpixel-averaged analog,
and CY - CE bounds the expected energy of the abundance deviation between
scales.  All of them are computable from the observed image, the endmember
matrix, and an estimate of the noise covariance, which is what makes the
full algorithm parameter-free.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data_model import SpectralImage
from .errors import DataFormatError

RESIDUAL_RIDGE = 1e-6


@dataclass(frozen=True)
class NoiseCovariance:
    """Per-band noise covariance, symmetric PSD (reflectance^2 units)."""

    Sigma: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.Sigma, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DataFormatError("noise covariance must be square")
        if np.abs(S - S.T).max(initial=0.0) > 1e-10:
            raise DataFormatError("noise covariance must be symmetric")
        if np.diag(S).min(initial=0.0) < 0:
            raise DataFormatError("noise covariance has a negative diagonal entry")
        object.__setattr__(self, "Sigma", 0.5 * (S + S.T))

    @property
    def trace(self) -> float:
        return float(np.trace(self.Sigma))

    def sqrt(self) -> np.ndarray:
        """Symmetric PSD square root."""
        S = self.Sigma
        if np.count_nonzero(S - np.diag(np.diag(S))) == 0:
            d = np.diag(S)
            if d.min(initial=0.0) < 0:
                raise DataFormatError("covariance is not PSD")
            return np.diag(np.sqrt(d))
        w, V = np.linalg.eigh(S)
        if w.min() < -1e-12 * max(w.max(), 1.0):
            raise DataFormatError("covariance is not PSD")
        return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def estimate_noise_cov(img: SpectralImage, ridge: float = RESIDUAL_RIDGE) -> NoiseCovariance:
    """Residual-method noise estimate: each band is regressed on all other
    bands across pixels (after removing band means) and the residual
    variances form a diagonal covariance.

    The normal equations are damped by ``ridge`` times the mean diagonal of
    the predictor Gram matrix for conditioning, and the residual variances
    are divided by N - L to undo the regression degrees of freedom.
    Requires N > L.
    """
    L, N = img.bands, img.n_pixels
    if N <= L:
        raise DataFormatError(f"need more pixels than bands (N={N}, L={L})")
    X = img.data - img.data.mean(axis=1, keepdims=True)
    G = X @ X.T
    G = 0.5 * (G + G.T)
    variances = np.empty(L)
    all_idx = np.arange(L)
    for ell in range(L):
        idx = all_idx[all_idx != ell]
        A = G[np.ix_(idx, idx)]
        lam = ridge * float(np.trace(A)) / (L - 1)
        b = G[idx, ell]
        w = np.linalg.solve(A + lam * np.eye(L - 1), b)
        rss = float(G[ell, ell] - 2.0 * (w @ b) + w @ (A @ w))
        variances[ell] = max(rss, 0.0) / (N - L)
    return NoiseCovariance(np.diag(variances))


def compute_C1(noise: NoiseCovariance, sigma_psi2: float) -> float:
    """Expected per-pixel residual energy at the original scale:
    trace(Sigma) + sigma_psi2."""
    if sigma_psi2 < 0:
        raise DataFormatError("sigma_psi2 must be nonnegative")
    return noise.trace + sigma_psi2


def compute_C0(noise: NoiseCovariance, sigma_psi2: float, S: float) -> float:
    """Expected per-superpixel residual energy at the coarse scale:
    trace(Sigma)/S + sigma_psi2.  Averaging S pixels shrinks the noise term
    while the modeling-error term keeps its energy."""
    if S < 1:
        raise DataFormatError("average superpixel size must be >= 1")
    if sigma_psi2 < 0:
        raise DataFormatError("sigma_psi2 must be nonnegative")
    return noise.trace / S + sigma_psi2


def compute_CY(pinv: np.ndarray, Y: SpectralImage, Y_D: np.ndarray) -> float:
    """Mean energy of the endmember-space projection of the difference
    between the image and its coarse (replicated) version."""
    if Y_D.shape != Y.data.shape:
        raise DataFormatError("Y_D must have the same shape as the image data")
    R = pinv @ (Y.data - Y_D)
    return float(np.einsum("ij,ij->", R, R)) / Y.n_pixels


def compute_CE(pinv: np.ndarray, noise: NoiseCovariance, S: float) -> float:
    """Noise share of CY: |pinv @ Sigma^(1/2)|_F^2 * (S - 1) / S."""
    if S < 1:
        raise DataFormatError("average superpixel size must be >= 1")
    root = noise.sqrt()
    T = pinv @ root
    return float(np.einsum("ij,ij->", T, T)) * (S - 1.0) / S


def default_sigma_psi2(img: SpectralImage) -> float:
    """Modeling-error energy heuristic: 1e-8 times the mean pixel energy."""
    return 1e-8 * float(np.einsum("ij,ij->", img.data, img.data)) / img.n_pixels


@dataclass(frozen=True)
class ScaleConstants:
    """The blind constants of both scales plus the quantities they came
    from.  ``anchor_gap`` is the usable CY - CE (clamped away from zero when
    the estimate turns negative)."""

    C0: float
    C1: float
    CY: float
    CE: float
    sigma_psi2: float
    S: float

    @property
    def anchor_gap(self) -> float:
        gap = self.CY - self.CE
        if gap <= 0:
            return 1e-12 * max(self.CY, 1.0)
        return gap


def scale_constants(img: SpectralImage, pinv: np.ndarray, noise: NoiseCovariance,
                    Y_D: np.ndarray, S: float, sigma_psi2: float,
                    S_noise: float | None = None) -> ScaleConstants:
    """Assemble every blind constant for a given multiscale decomposition.

    ``S_noise`` is the size average used for the coarse noise term; passing
    the harmonic mean of the actual superpixel sizes keeps C0 exact when
    sizes are uneven (per-superpixel noise energy scales with 1/size, so
    the superpixel-wise expectation involves the mean of 1/size).
    """
    consts = ScaleConstants(
        C0=compute_C0(noise, sigma_psi2, S if S_noise is None else S_noise),
        C1=compute_C1(noise, sigma_psi2),
        CY=compute_CY(pinv, img, Y_D),
        CE=compute_CE(pinv, noise, S),
        sigma_psi2=sigma_psi2,
        S=S,
    )
    if consts.CY - consts.CE <= 0:
        warnings.warn(
            "estimated CY - CE is not positive; clamping the inter-scale "
            "constraint to a tiny value", RuntimeWarning,
        )
    return consts
