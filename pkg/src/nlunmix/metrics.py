"""Evaluation metrics: RMSE, spectral angle, spectral divergence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError

SID_FLOOR = 1e-12


def rmse(X: np.ndarray, Xhat: np.ndarray) -> float:
    """Root mean squared error over all matrix entries."""
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if X.shape != Xhat.shape:
        raise DataFormatError(f"shape mismatch: {X.shape} vs {Xhat.shape}")
    return float(np.sqrt(np.mean((X - Xhat) ** 2)))


def sam(y: np.ndarray, yhat: np.ndarray) -> float:
    """Spectral angle between two vectors, in radians."""
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    ny, nh = np.linalg.norm(y), np.linalg.norm(yhat)
    if ny == 0.0 or nh == 0.0:
        raise DataFormatError("spectral angle of a zero vector is undefined")
    cos = np.clip((y @ yhat) / (ny * nh), -1.0, 1.0)
    return float(np.arccos(cos))


def sid(y: np.ndarray, yhat: np.ndarray, floor: float = SID_FLOOR) -> float:
    """Symmetric spectral information divergence.

    Both vectors are floored at ``floor`` and normalized to probability
    distributions; the result is D(p||q) + D(q||p), which is invariant to
    positive rescaling of either input.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.min(initial=0.0) < 0 or yhat.min(initial=0.0) < 0:
        raise DataFormatError("spectral divergence needs nonnegative vectors")
    if y.sum() == 0.0 or yhat.sum() == 0.0:
        raise DataFormatError("spectral divergence of a zero vector is undefined")
    p = np.maximum(y, floor)
    q = np.maximum(yhat, floor)
    p = p / p.sum()
    q = q / q.sum()
    return float(np.sum((p - q) * np.log(p / q)))


def sam_mean(Y: np.ndarray, Yhat: np.ndarray) -> float:
    """Mean spectral angle across matrix columns (radians)."""
    Y = np.asarray(Y, dtype=np.float64)
    Yhat = np.asarray(Yhat, dtype=np.float64)
    if Y.shape != Yhat.shape:
        raise DataFormatError(f"shape mismatch: {Y.shape} vs {Yhat.shape}")
    return float(np.mean([sam(Y[:, n], Yhat[:, n]) for n in range(Y.shape[1])]))


def sid_mean(Y: np.ndarray, Yhat: np.ndarray) -> float:
    """Mean spectral divergence across matrix columns."""
    Y = np.asarray(Y, dtype=np.float64)
    Yhat = np.asarray(Yhat, dtype=np.float64)
    if Y.shape != Yhat.shape:
        raise DataFormatError(f"shape mismatch: {Y.shape} vs {Yhat.shape}")
    return float(np.mean([sid(Y[:, n], Yhat[:, n]) for n in range(Y.shape[1])]))


@dataclass(frozen=True)
class EvalReport:
    """Evaluation summary; image metrics are None when no image pair was
    supplied."""

    rmse_a: float | None = None
    rmse_y: float | None = None
    sam_mean: float | None = None
    sid_mean: float | None = None

    def __post_init__(self):
        for name in ("rmse_a", "rmse_y", "sam_mean", "sid_mean"):
            val = getattr(self, name)
            if val is not None and (not np.isfinite(val) or val < 0):
                raise DataFormatError(f"{name} must be finite and nonnegative")

    def to_text(self) -> str:
        lines = []
        if self.rmse_a is not None:
            lines.append(f"rmse_a = {self.rmse_a:.6f}")
        if self.rmse_y is not None:
            lines.append(f"rmse_y = {self.rmse_y:.6f}")
        if self.sam_mean is not None:
            lines.append(f"sam_mean_deg = {np.degrees(self.sam_mean):.6f}")
        if self.sid_mean is not None:
            lines.append(f"sid_mean = {self.sid_mean:.8f}")
        return "\n".join(lines)

    def to_csv_row(self) -> str:
        cells = []
        for val in (self.rmse_a, self.rmse_y, self.sam_mean, self.sid_mean):
            cells.append("" if val is None else f"{val:.10g}")
        return ",".join(cells)


def evaluate(A_true=None, A_est=None, Y_true=None, Y_est=None) -> EvalReport:
    """Assemble an EvalReport from whichever truth/estimate pairs exist."""
    rmse_a = rmse(A_true, A_est) if A_true is not None and A_est is not None else None
    rmse_y = sam_m = sid_m = None
    if Y_true is not None and Y_est is not None:
        rmse_y = rmse(Y_true, Y_est)
        sam_m = sam_mean(Y_true, Y_est)
        sid_m = sid_mean(Y_true, Y_est)
    return EvalReport(rmse_a, rmse_y, sam_m, sid_m)
