"""Synthetic scene generation for benchmarking.

Scenes are built from spatially correlated abundance fields (blurred
white-noise fields, squared and normalized to the simplex), mixed through
one of three models (linear, bilinear, or post-nonlinear), and corrupted
by white Gaussian noise calibrated to a target SNR.  Everything is
deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .data_model import (
    AbundanceMap,
    EndmemberMatrix,
    SpectralImage,
    load_endmembers,
    load_matrix_image,
    save_endmembers,
    save_matrix_image,
)
from .errors import DataFormatError
from .statistics import NoiseCovariance

MODELS = ("lmm", "blmm", "pnmm")
PNMM_EXPONENT = 0.7
DEFAULT_BANDS = 224
DEFAULT_SMOOTHNESS = 5.0


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic scene.

    ``mix_floor`` lifts every abundance field before normalization so the
    scene contains genuinely mixed pixels; zero gives fields dominated by
    near-pure regions.
    """

    width: int
    height: int
    n_endmembers: int
    model: str = "lmm"
    snr_db: float = np.inf
    seed: int = 0
    smoothness: float = DEFAULT_SMOOTHNESS
    mix_floor: float = 0.25

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DataFormatError("scene dimensions must be positive")
        if self.n_endmembers < 1:
            raise DataFormatError("need at least one endmember")
        if self.model not in MODELS:
            raise DataFormatError(f"unknown mixing model '{self.model}'")
        if np.isnan(self.snr_db):
            raise DataFormatError("snr_db must not be NaN")
        if self.smoothness <= 0:
            raise DataFormatError("smoothness must be positive")
        if self.mix_floor < 0:
            raise DataFormatError("mix_floor must be nonnegative")


def gen_abundances(spec: SceneSpec) -> AbundanceMap:
    """Spatially correlated abundance fields on the unit simplex.

    Each endmember field is white noise blurred with a Gaussian kernel of
    width ``smoothness`` and squared; pixels are then normalized to sum to
    one.  A single endmember yields the all-ones map.
    """
    P, H, W = spec.n_endmembers, spec.height, spec.width
    if P == 1:
        return AbundanceMap(np.ones((1, H * W)))
    rng = np.random.default_rng(spec.seed)
    fields = rng.standard_normal((P, H, W))
    for p in range(P):
        fields[p] = gaussian_filter(fields[p], sigma=spec.smoothness,
                                    mode="nearest")
    fields = fields.reshape(P, H * W) ** 2
    # normalize field energies before applying the mixing floor so one
    # endmember cannot drown the others
    fields /= np.maximum(fields.mean(axis=1, keepdims=True), 1e-32)
    fields += spec.mix_floor + 1e-32
    return AbundanceMap(fields / fields.sum(axis=0, keepdims=True))


def synthetic_endmembers(n_bands: int = DEFAULT_BANDS, n_endmembers: int = 3,
                         seed: int = 0) -> np.ndarray:
    """Smooth synthetic reflectance signatures in (0, 1).

    Each spectrum is a positive combination of shifted sigmoids over the
    band axis, rescaled into a reflectance-like range.  Draws are retried
    (deterministically) until the matrix is well conditioned and the
    signatures are mutually separated.
    """
    x = np.linspace(0.0, 1.0, n_bands)
    for trial in range(256):
        rng = np.random.default_rng(seed * 1009 + trial)
        M = np.empty((n_bands, n_endmembers))
        for p in range(n_endmembers):
            spectrum = np.zeros(n_bands)
            for _ in range(10):
                center = rng.uniform(0.0, 1.0)
                width = rng.uniform(0.01, 0.08)
                sign = rng.choice([-1.0, 1.0])
                spectrum += sign * rng.uniform(0.2, 1.0) / (
                    1.0 + np.exp(-(x - center) / width))
            lo, hi = spectrum.min(), spectrum.max()
            M[:, p] = 0.05 + 0.9 * (spectrum - lo) / max(hi - lo, 1e-9)
        if n_endmembers == 1:
            return M
        if _endmembers_usable(M):
            return M
    raise DataFormatError("could not draw well-separated synthetic endmembers")


def _endmembers_usable(M: np.ndarray) -> bool:
    """Separation checks: well conditioned, mutually distinct, and with
    pairwise products that leave the column span (so nonlinear mixtures are
    not absorbed by a linear fit)."""
    P = M.shape[1]
    if np.linalg.cond(M) >= 100.0:
        return False
    unit = M / np.linalg.norm(M, axis=0)
    if np.abs(unit.T @ unit - np.eye(P)).max() >= 0.98:
        return False
    Q, _ = np.linalg.qr(M)
    for i in range(P - 1):
        for j in range(i + 1, P):
            prod = M[:, i] * M[:, j]
            resid = prod - Q @ (Q.T @ prod)
            if np.linalg.norm(resid) < 0.08 * np.linalg.norm(prod):
                return False
    return True


def mix(M: EndmemberMatrix, A: AbundanceMap, model: str,
        pnmm_exponent: float = PNMM_EXPONENT, width: int | None = None,
        height: int | None = None) -> SpectralImage:
    """Noise-free mixing of abundances through the chosen model.

    lmm:  Y = M A
    blmm: Y = M A + sum_{i<j} a_i a_j (m_i o m_j)   (o = elementwise)
    pnmm: Y = (M A)^exponent, elementwise
    """
    if model not in MODELS:
        raise DataFormatError(f"unknown mixing model '{model}'")
    A_ = A.A
    P, N = A_.shape
    if width is None or height is None:
        # fall back to a single row of pixels
        width, height = N, 1
    lin = M.M @ A_
    if model == "lmm":
        Y = lin
    elif model == "blmm":
        Y = lin.copy()
        for i in range(P - 1):
            for j in range(i + 1, P):
                Y += (A_[i] * A_[j])[None, :] * (M.M[:, i] * M.M[:, j])[:, None]
    else:
        if lin.min() < 0:
            raise DataFormatError("pnmm requires nonnegative linear mixtures")
        Y = lin ** pnmm_exponent
    return SpectralImage(Y, width, height)


def add_noise(Y: SpectralImage, snr_db: float, seed: int = 0):
    """Add white Gaussian noise at the requested SNR.

    The per-entry variance is v = sum(Y^2) / (L N 10^(snr/10)); returns
    the noisy image and the true covariance v * I for oracle tests.
    An infinite SNR returns the image unchanged with zero covariance.
    """
    L, N = Y.data.shape
    energy = float(np.einsum("ij,ij->", Y.data, Y.data))
    if energy == 0.0:
        raise DataFormatError("cannot calibrate noise for an all-zero image")
    if np.isinf(snr_db):
        return SpectralImage(Y.data.copy(), Y.width, Y.height), \
            NoiseCovariance(np.zeros((L, L)))
    v = energy / (L * N * 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noisy = Y.data + np.sqrt(v) * rng.standard_normal((L, N))
    return SpectralImage(noisy, Y.width, Y.height), \
        NoiseCovariance(v * np.eye(L))


def generate_scene(spec: SceneSpec, M: EndmemberMatrix | None = None,
                   endmember_seed: int | None = None):
    """Full scene draw: abundances, mixing, and noise.

    Returns (noisy image, clean image, abundances, endmembers, noise_cov).
    When no endmember matrix is supplied, synthetic signatures are drawn
    from ``endmember_seed`` (default: the scene seed).
    """
    if M is None:
        es = spec.seed if endmember_seed is None else endmember_seed
        M = EndmemberMatrix(synthetic_endmembers(
            n_endmembers=spec.n_endmembers, seed=es))
    if M.n_endmembers != spec.n_endmembers:
        raise DataFormatError("endmember count does not match the scene spec")
    A = gen_abundances(spec)
    clean = mix(M, A, spec.model, width=spec.width, height=spec.height)
    noisy, noise = add_noise(clean, spec.snr_db, seed=spec.seed + 1)
    return noisy, clean, A, M, noise


SCENE_IMAGE = "image.hsi"
SCENE_ABUNDANCES = "abundances.hsi"
SCENE_ENDMEMBERS = "endmembers.csv"
SCENE_SPEC = "scene.txt"


def write_scene(outdir, spec: SceneSpec, img: SpectralImage, A: AbundanceMap,
                M: EndmemberMatrix) -> None:
    """Write a scene bundle: image and abundances in the binary container,
    endmembers as CSV, and the recipe as key=value text."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_matrix_image(outdir / SCENE_IMAGE, img.data, img.width, img.height)
    save_matrix_image(outdir / SCENE_ABUNDANCES, A.A, img.width, img.height)
    save_endmembers(outdir / SCENE_ENDMEMBERS, M.M)
    lines = [
        f"width={spec.width}",
        f"height={spec.height}",
        f"endmembers={spec.n_endmembers}",
        f"model={spec.model}",
        f"snr_db={spec.snr_db}",
        f"seed={spec.seed}",
        f"smoothness={spec.smoothness}",
    ]
    (outdir / SCENE_SPEC).write_text("\n".join(lines) + "\n")


def read_scene(indir):
    """Read back a scene bundle; returns (spec, image, abundances, M)."""
    indir = Path(indir)
    fields = {}
    for line in (indir / SCENE_SPEC).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    spec = SceneSpec(
        width=int(fields["width"]), height=int(fields["height"]),
        n_endmembers=int(fields["endmembers"]), model=fields["model"],
        snr_db=float(fields["snr_db"]), seed=int(fields["seed"]),
        smoothness=float(fields["smoothness"]),
    )
    data, w, h = load_matrix_image(indir / SCENE_IMAGE)
    img = SpectralImage(data, w, h)
    a_data, _, _ = load_matrix_image(indir / SCENE_ABUNDANCES)
    M = load_endmembers(indir / SCENE_ENDMEMBERS)
    return spec, img, AbundanceMap(a_data), M
