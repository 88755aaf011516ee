"""Core matrix-shaped domain types and file IO.

Conventions used throughout the package:

- Images are stored column-per-pixel: ``data`` has shape (L, N) where L is
  the number of bands and N = width * height.  Pixel n corresponds to the
  grid position (row, col) = divmod(n, width), i.e. row-major order.
- Endmembers are stored as the columns of an (L, P) matrix M.
- Abundances are stored column-per-pixel as a (P, N) matrix.

The on-disk image format is a small binary container: an 8-byte magic
string, three little-endian uint32 fields (bands, width, height), then the
payload as little-endian float32 in band-interleaved-by-pixel order (all
bands of pixel 0, then all bands of pixel 1, ...).  Abundance maps reuse
the same container with P in place of L.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, RankDeficientError

MAGIC = b"NLUMIX01"
_HEADER = struct.Struct("<III")

# Relative singular-value cutoff for the rank-revealing pseudo-inverse.
PINV_RCOND = 1e-12


@dataclass(frozen=True)
class SpectralImage:
    """An L-band reflectance cube viewed as an (L, N) matrix.

    Parameters
    ----------
    data : ndarray, shape (L, N)
        Reflectance values, one column per pixel, pixels in row-major order.
    width, height : int
        Spatial dimensions; N must equal width * height.
    """

    data: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise DataFormatError("image data must be a 2-D (bands, pixels) array")
        if self.width < 1 or self.height < 1:
            raise DataFormatError("width and height must be positive")
        if data.shape[1] != self.width * self.height:
            raise DataFormatError(
                f"pixel count {data.shape[1]} does not match "
                f"{self.width}x{self.height} grid"
            )
        if data.shape[0] < 2:
            raise DataFormatError("a spectral image needs at least 2 bands")
        if not np.all(np.isfinite(data)):
            raise DataFormatError("image contains non-finite values")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.data.shape[1]

    def pixel_index(self, row: int, col: int) -> int:
        """Flat pixel index of grid position (row, col), row-major."""
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise IndexError("pixel position out of range")
        return row * self.width + col

    def as_cube(self) -> np.ndarray:
        """Return a (height, width, bands) view-like copy of the data."""
        return self.data.T.reshape(self.height, self.width, self.bands)


@dataclass(frozen=True)
class EndmemberMatrix:
    """Endmember signatures M (L, P) together with a cached left
    pseudo-inverse ``pinv`` satisfying pinv @ M = I_P."""

    M: np.ndarray
    pinv: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.float64)
        object.__setattr__(self, "M", M)
        if M.ndim != 2:
            raise DataFormatError("endmember matrix must be 2-D")
        if not np.all(np.isfinite(M)):
            raise DataFormatError("endmember matrix contains non-finite values")
        if self.pinv is None:
            object.__setattr__(self, "pinv", pseudo_inverse(M))
        resid = np.abs(self.pinv @ M - np.eye(M.shape[1])).max()
        if resid > 1e-8:
            raise RankDeficientError(
                f"pseudo-inverse check failed: |pinv @ M - I|_max = {resid:.3e}"
            )

    @property
    def n_bands(self) -> int:
        return self.M.shape[0]

    @property
    def n_endmembers(self) -> int:
        return self.M.shape[1]


@dataclass(frozen=True)
class AbundanceMap:
    """Fractional abundances, one (P,) column per pixel."""

    A: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        object.__setattr__(self, "A", A)
        if A.ndim != 2:
            raise DataFormatError("abundance map must be 2-D")
        if not np.all(np.isfinite(A)):
            raise DataFormatError("abundance map contains non-finite values")

    def check_simplex(self, neg_tol: float = 1e-9, sum_tol: float = 1e-6) -> None:
        """Raise unless every column is on the unit simplex within tolerance."""
        if self.A.min(initial=0.0) < -neg_tol:
            raise DataFormatError(
                f"abundances below -{neg_tol:g}: min = {self.A.min():.3e}"
            )
        sums = self.A.sum(axis=0)
        err = np.abs(sums - 1.0).max(initial=0.0)
        if err > sum_tol:
            raise DataFormatError(f"column sums deviate from 1 by {err:.3e}")


@dataclass(frozen=True)
class NonlinearPart:
    """Per-pixel nonlinear contribution evaluated at the endmember rows,
    stored as an (L, N) matrix."""

    Psi: np.ndarray

    def __post_init__(self):
        Psi = np.asarray(self.Psi, dtype=np.float64)
        object.__setattr__(self, "Psi", Psi)
        if Psi.ndim != 2:
            raise DataFormatError("nonlinear part must be 2-D")
        if not np.all(np.isfinite(Psi)):
            raise DataFormatError("nonlinear part contains non-finite values")


def pseudo_inverse(M: np.ndarray) -> np.ndarray:
    """Left pseudo-inverse of a full-column-rank (L, P) matrix.

    Computed from the SVD with singular values below
    ``PINV_RCOND * sigma_max`` treated as zero; raises RankDeficientError
    when fewer than P singular values survive the cutoff.
    """
    M = np.asarray(M, dtype=np.float64)
    L, P = M.shape
    if P > L:
        raise RankDeficientError(f"more endmembers ({P}) than bands ({L})")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0.0 or s[-1] <= PINV_RCOND * s[0]:
        raise RankDeficientError(
            f"endmember matrix is rank deficient (singular values {s})"
        )
    return (Vt.T / s) @ U.T


def save_matrix_image(path, data: np.ndarray, width: int, height: int) -> None:
    """Write a (bands, pixels) matrix in the binary image container.

    The payload is float32; values that are not float32-representable are
    rounded, so a save/load round trip is bit-exact only from the second
    save onward (or when the data came from a float32 source).
    """
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] != width * height:
        raise DataFormatError("data shape does not match the declared grid")
    payload = np.ascontiguousarray(data.T, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(data.shape[0], width, height))
        fh.write(payload.tobytes())


def load_matrix_image(path):
    """Read a binary image container; returns (data, width, height) with
    data of shape (bands, pixels) as float64."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise DataFormatError(f"{path}: truncated header")
        bands, width, height = _HEADER.unpack(header)
        if bands < 1 or width < 1 or height < 1:
            raise DataFormatError(f"{path}: invalid dimensions in header")
        payload = fh.read()
    expect = bands * width * height * 4
    if len(payload) != expect:
        raise DataFormatError(
            f"{path}: payload has {len(payload)} bytes, header implies {expect}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    data = flat.reshape(width * height, bands).T.astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise DataFormatError(f"{path}: payload contains non-finite values")
    return data, width, height


def load_image(path) -> SpectralImage:
    """Load a spectral image from the binary container."""
    data, width, height = load_matrix_image(path)
    return SpectralImage(data, width, height)


def save_image(path, img: SpectralImage) -> None:
    save_matrix_image(path, img.data, img.width, img.height)


def load_endmembers(path) -> EndmemberMatrix:
    """Load an (L, P) endmember matrix from CSV, one band per row."""
    try:
        M = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (ValueError, OSError) as exc:
        raise DataFormatError(f"{path}: cannot parse endmember CSV: {exc}") from exc
    return EndmemberMatrix(M)


def save_endmembers(path, M: np.ndarray) -> None:
    np.savetxt(path, np.asarray(M, dtype=np.float64), delimiter=",")
