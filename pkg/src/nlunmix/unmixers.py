"""Unmixing algorithms: FCLS, K-Hype, and the blind two-scale method.

All kernel-based solvers share the same dual structure: at a fixed
multiplier every pixel contributes a small concave QP whose Hessian is the
same for all pixels, so the per-pixel problems are solved as one batch.
The blind pipeline (``bmua_n``) estimates every constant from the data,
unmixes the superpixel-averaged image first, and then re-unmixes the full
image anchored to the expanded coarse abundances.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import nnls

from .data_model import AbundanceMap, EndmemberMatrix, NonlinearPart, SpectralImage
from .dual_solver import (
    Bracket2D,
    CoarseDualContext,
    DualSolution,
    FineDualContext,
    bisect_1d,
    bisect_2d,
    g0_residual,
    g_fine_residuals,
    maximize_concave_batch,
    quad_objective,
)
from .errors import BracketError, ConstraintError, DataFormatError, StageError, UnmixError
from .kernels import GramMatrix, KernelConfig, gram_matrix
from .multiscale import coarsen, expand, segment_with_homogeneity
from .statistics import (
    ScaleConstants,
    default_sigma_psi2,
    estimate_noise_cov,
    scale_constants,
)

FCLS_SUM_WEIGHT = 1e4
KHYPE_MU_GRID = (0.001, 0.002, 0.005, 0.01, 0.02, 0.1, 1.0)

# Kernel used by the unmixers: quadratic with a small offset.  A unit
# offset puts affine functions in the fluctuation space at half the cost
# of the abundance term, which provably shrinks abundances toward the
# simplex center (the trend/fluctuation split becomes degenerate).  A tiny
# offset keeps those functions representable (so residual targets stay
# attainable under smooth distortions like the post-nonlinear model) while
# making them expensive enough that the linear trend stays with the
# abundances; the drift factor is 2c/(1+2c), about 2% here.
UNMIX_KERNEL = KernelConfig(degree=2, offset=0.01)


@dataclass(frozen=True)
class BmuaConfig:
    """Settings of the blind two-scale unmixer.

    Everything has a data-driven default: sigma_psi2 falls back to the
    small-energy heuristic, and the superpixel-count bounds fall back to
    mean sizes of 8 and 170 pixels.  The multiplier search runs on the
    log-scaled bracket ``mu_bracket``, geometrically expanded up to
    ``bracket_expand_attempts`` times when the sign test fails.
    """

    kernel: KernelConfig = UNMIX_KERNEL
    sigma_psi2: float | None = None
    kmin: int | None = None
    kmax: int | None = None
    hom_eps: float = 0.1
    compactness: float | None = None
    prefer_larger_size: bool = True
    mu_bracket: tuple = (1e-4, 1e4)
    bracket_expand_factor: float = 10.0
    bracket_expand_attempts: int = 3
    coarse_max_iter: int = 10
    coarse_tol: float = 0.0
    coarse_f_tol_rel: float = 0.01
    fine_max_iter: int = 10
    fine_eps: float = 0.1
    kkt_tol: float = 1e-8
    clip_tol: float = 1e-9

    def __post_init__(self):
        if self.mu_bracket[0] <= 0 or self.mu_bracket[0] >= self.mu_bracket[1]:
            raise ValueError("mu_bracket must be positive and increasing")
        for name in ("hom_eps", "fine_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("kkt_tol", "clip_tol", "bracket_expand_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class UnmixResult:
    """Output of one unmixing run.

    ``residual`` is always the exact reconstruction gap Y - M A - Psi of
    the stored estimates; the dual-predicted residuals live in the
    diagnostics.  ``dual`` is None for FCLS.
    """

    abundances: AbundanceMap
    nonlinear: NonlinearPart | None
    residual: np.ndarray
    dual: DualSolution | None
    diagnostics: dict


def _clip_to_simplex(A: np.ndarray, clip_tol: float) -> np.ndarray:
    """Zero out round-off negatives and renormalize each column."""
    worst = A.min(initial=0.0)
    if worst < -1e3 * clip_tol:
        warnings.warn(
            f"abundance recovery produced negatives down to {worst:.3e}; "
            "clipping beyond the round-off tolerance", RuntimeWarning,
        )
    A = np.maximum(A, 0.0)
    sums = A.sum(axis=0)
    good = sums > 0.5
    A[:, good] /= sums[good]
    if not good.all():
        warnings.warn("degenerate abundance columns left unnormalized",
                      RuntimeWarning)
    return A


# ---------------------------------------------------------------------------
# FCLS baseline

def fcls(Y: SpectralImage, M: EndmemberMatrix,
         sum_weight: float = FCLS_SUM_WEIGHT) -> UnmixResult:
    """Fully constrained least squares, pixel by pixel.

    The sum-to-one constraint is folded into the nonnegative LS problem as
    a heavily weighted extra row; abundances are renormalized afterwards.
    """
    L, P = M.n_bands, M.n_endmembers
    N = Y.n_pixels
    Maug = np.vstack([M.M, sum_weight * np.ones((1, P))])
    A = np.empty((P, N))
    for n in range(N):
        rhs = np.concatenate([Y.data[:, n], [sum_weight]])
        A[:, n], _ = nnls(Maug, rhs)
    A = _clip_to_simplex(A, 1e-9)
    residual = Y.data - M.M @ A
    diagnostics = {"algorithm": "fcls", "sum_weight": sum_weight}
    return UnmixResult(AbundanceMap(A), None, residual, None, diagnostics)


# ---------------------------------------------------------------------------
# shared dual-system assembly

class _CoarseSystem:
    """Hessian/linear-term assembly shared by K-Hype and the coarse stage.

    The dual vector per block is [beta (L); gamma (P); lambda (1)] and the
    Hessian is G(t) = G0 + t * E_beta where t is 1/mu0 (or the fixed
    K-Hype regularizer).  G is singular along [0; 1; 1], which the QP
    solver receives as the flat direction.
    """

    def __init__(self, K: np.ndarray, M: np.ndarray):
        L, P = M.shape
        n = L + P + 1
        ones = np.ones(P)
        G0 = np.zeros((n, n))
        MMt = M @ M.T
        G0[:L, :L] = K + 0.5 * (MMt + MMt.T)
        G0[:L, L:L + P] = M
        G0[L:L + P, :L] = M.T
        G0[:L, -1] = -(M @ ones)
        G0[-1, :L] = -(M @ ones)
        G0[L:L + P, L:L + P] = np.eye(P)
        G0[L:L + P, -1] = -1.0
        G0[-1, L:L + P] = -1.0
        G0[-1, -1] = P
        self.G0 = 0.5 * (G0 + G0.T)
        self.L, self.P, self.n = L, P, n
        self.nonneg = np.arange(L, L + P)
        self.flat = np.concatenate([np.zeros(L), ones, [1.0]])

    def hessian(self, t: float) -> np.ndarray:
        G = self.G0.copy()
        G[np.arange(self.L), np.arange(self.L)] += t
        return G

    def linear_terms(self, Y: np.ndarray) -> np.ndarray:
        K = Y.shape[1]
        return np.vstack([Y, np.zeros((self.P, K)), -np.ones((1, K))])


class _FineSystem:
    """Assembly for the anchored fine-scale dual.

    Dual vector layout: [beta (L); mu3 (P); gamma (P); lambda (1)].
    G(mu1, mu2) = base + (1/mu1) E_beta + (1/mu2) D, with the flat
    direction [0; 0; 1; 1].
    """

    def __init__(self, K: np.ndarray, M: np.ndarray, pinv: np.ndarray):
        L, P = M.shape
        n = L + 2 * P + 1
        self.L, self.P, self.n = L, P, n
        KPt = K @ pinv.T            # (L, P)
        PKPt = pinv @ KPt           # (P, P)
        base = np.zeros((n, n))
        base[:L, :L] = K
        base[:L, L:L + P] = -KPt
        base[L:L + P, :L] = -KPt.T
        base[L:L + P, L:L + P] = 0.5 * (PKPt + PKPt.T)
        self.base = 0.5 * (base + base.T)

        D = np.zeros((n, n))
        MMt = M @ M.T
        ones = np.ones(P)
        g0 = L + P  # gamma offset
        D[:L, :L] = 0.5 * (MMt + MMt.T)
        D[L:L + P, L:L + P] = np.eye(P)
        D[:L, g0:g0 + P] = M
        D[g0:g0 + P, :L] = M.T
        D[:L, -1] = -(M @ ones)
        D[-1, :L] = -(M @ ones)
        D[g0:g0 + P, g0:g0 + P] = np.eye(P)
        D[g0:g0 + P, -1] = -1.0
        D[-1, g0:g0 + P] = -1.0
        D[-1, -1] = P
        self.D = 0.5 * (D + D.T)

        self.nonneg = np.arange(g0, g0 + P)
        self.flat = np.concatenate([np.zeros(L + P), ones, [1.0]])

    def hessian(self, mu1: float, mu2: float) -> np.ndarray:
        G = self.base + self.D / mu2
        G[np.arange(self.L), np.arange(self.L)] += 1.0 / mu1
        return G

    def linear_terms(self, Y: np.ndarray, M: np.ndarray, pinv: np.ndarray,
                     A_D: np.ndarray, Psi_D: np.ndarray) -> np.ndarray:
        return np.vstack([
            Y - M @ A_D,
            -(pinv @ Psi_D),
            -A_D,
            (A_D.sum(axis=0) - 1.0)[None, :],
        ])


# ---------------------------------------------------------------------------
# K-Hype

def khype(Y: SpectralImage, M: EndmemberMatrix, mu: float,
          cfg: KernelConfig = UNMIX_KERNEL, kkt_tol: float = 1e-8,
          gram: GramMatrix | None = None) -> UnmixResult:
    """Kernel LS-SVR unmixing with a fixed residual regularizer mu.

    Solves the per-pixel dual QP; mu plays the role of the inverse of the
    coarse-scale multiplier, so the recovered residual is mu * beta.
    """
    if mu <= 0:
        raise DataFormatError("mu must be positive")
    Kmat = gram if gram is not None else gram_matrix(M, cfg)
    sys_ = _CoarseSystem(Kmat.K, M.M)
    G = sys_.hessian(mu)
    C = sys_.linear_terms(Y.data)
    Omega, _ = maximize_concave_batch(G, C, sys_.nonneg, flat_dir=sys_.flat,
                                      kkt_tol=kkt_tol)
    objective = float(quad_objective(G, C, Omega).sum())
    dual = DualSolution(Omega, (1.0 / mu,), objective, sys_.L, sys_.P, "coarse")
    A = _clip_to_simplex(dual.recover_abundances(M.M), 1e-9)
    Psi = Kmat.K @ dual.beta
    residual = Y.data - M.M @ A - Psi
    diagnostics = {
        "algorithm": "khype",
        "mu": mu,
        "dual_objective": objective,
        "mean_residual_energy": float(np.einsum("ij,ij->", dual.beta, dual.beta))
        * mu**2 / Y.n_pixels,
    }
    return UnmixResult(AbundanceMap(A), NonlinearPart(Psi), residual, dual,
                       diagnostics)


def khype_grid(Y: SpectralImage, M: EndmemberMatrix,
               grid=KHYPE_MU_GRID, cfg: KernelConfig = UNMIX_KERNEL,
               truth: AbundanceMap | None = None):
    """Run K-Hype across a regularizer grid and pick the best value.

    With ``truth`` given the selection minimizes the abundance RMSE
    (the usual synthetic-benchmark protocol); otherwise it minimizes the
    reconstruction RMSE.  Returns (best_mu, best_result, rows) where rows
    hold one (mu, score) record per grid point.
    """
    grid = list(grid)
    if not grid:
        raise DataFormatError("empty mu grid")
    if any(g <= 0 for g in grid):
        raise DataFormatError("mu grid values must be positive")
    Kmat = gram_matrix(M, cfg)
    rows, best = [], None
    for mu in grid:
        res = khype(Y, M, mu, cfg, gram=Kmat)
        if truth is not None:
            score = float(np.sqrt(np.mean((truth.A - res.abundances.A) ** 2)))
        else:
            score = float(np.sqrt(np.mean(res.residual ** 2)))
        rows.append({"mu": mu, "score": score})
        if best is None or score < best[2]:
            best = (mu, res, score)
    return best[0], best[1], rows


# ---------------------------------------------------------------------------
# blind two-scale stages

def _log_bracket(cfg: BmuaConfig):
    return math.log(cfg.mu_bracket[0]), math.log(cfg.mu_bracket[1])


def coarse_residual_floor(Yc: np.ndarray, M: EndmemberMatrix,
                          cfg: BmuaConfig = BmuaConfig(),
                          gram: GramMatrix | None = None,
                          mu0: float = 1e8) -> float:
    """Mean residual energy of the tightest coarse fit the model reaches.

    Used to detect residual targets below what any multiplier can attain
    (the quadratic equality constraint is then infeasible).
    """
    Yc = np.atleast_2d(np.asarray(Yc, dtype=np.float64))
    Kmat = gram if gram is not None else gram_matrix(M, cfg.kernel)
    sys_ = _CoarseSystem(Kmat.K, M.M)
    C = sys_.linear_terms(Yc)
    G = sys_.hessian(1.0 / mu0)
    Omega, _ = maximize_concave_batch(G, C, sys_.nonneg, flat_dir=sys_.flat,
                                      kkt_tol=cfg.kkt_tol)
    beta = Omega[:sys_.L]
    return float(np.einsum("ij,ij->", beta, beta)) / (mu0**2 * Yc.shape[1])


def bmua_coarse(Yc: np.ndarray, M: EndmemberMatrix, C0: float,
                cfg: BmuaConfig = BmuaConfig(),
                gram: GramMatrix | None = None) -> UnmixResult:
    """Unmix the superpixel-averaged image under the residual-energy
    constraint C0.

    The multiplier mu0 is located by scalar bisection (on log mu0) of the
    residual function g0; each evaluation solves the whole batch of
    per-superpixel QPs.  Returns a coarse-resolution UnmixResult.
    """
    if C0 <= 0:
        raise ConstraintError("C0 must be positive")
    Yc = np.atleast_2d(np.asarray(Yc, dtype=np.float64))
    Kmat = gram if gram is not None else gram_matrix(M, cfg.kernel)
    sys_ = _CoarseSystem(Kmat.K, M.M)
    C = sys_.linear_terms(Yc)
    K = Yc.shape[1]

    solve_cache: dict[float, np.ndarray] = {}

    def solve_at(mu0: float) -> np.ndarray:
        if mu0 not in solve_cache:
            G = sys_.hessian(1.0 / mu0)
            Omega, _ = maximize_concave_batch(G, C, sys_.nonneg,
                                              flat_dir=sys_.flat,
                                              kkt_tol=cfg.kkt_tol)
            solve_cache[mu0] = Omega
        return solve_cache[mu0]

    def f(u: float) -> float:
        mu0 = math.exp(u)
        Omega = solve_at(mu0)
        return g0_residual(mu0, CoarseDualContext(Omega[:sys_.L], C0))

    lo, hi = _log_bracket(cfg)
    step = math.log(cfg.bracket_expand_factor)
    for attempt in range(cfg.bracket_expand_attempts + 1):
        if np.sign(f(lo)) != np.sign(f(hi)):
            break
        lo -= step
        hi += step
    else:
        raise ConstraintError(
            f"no multiplier in [{math.exp(lo):.3e}, {math.exp(hi):.3e}] meets "
            f"the coarse residual constraint C0={C0:.6e}"
        )

    stats: dict = {}
    u = bisect_1d(f, lo, hi, tol=cfg.coarse_tol, max_iter=cfg.coarse_max_iter,
                  f_tol=cfg.coarse_f_tol_rel * K * C0, stats=stats)
    mu0 = math.exp(u)
    Omega = solve_at(mu0)
    G = sys_.hessian(1.0 / mu0)
    objective = float(quad_objective(G, C, Omega).sum()) - K * mu0 / 2.0 * C0
    dual = DualSolution(Omega, (mu0,), objective, sys_.L, sys_.P, "coarse")

    A = _clip_to_simplex(dual.recover_abundances(M.M), cfg.clip_tol)
    Psi = Kmat.K @ dual.beta
    residual = Yc - M.M @ A - Psi
    achieved = float(np.einsum("ij,ij->", dual.beta, dual.beta)) / (mu0**2 * K)
    diagnostics = {
        "algorithm": "bmua-coarse",
        "mu0": mu0,
        "dual_objective": objective,
        "bisect_iterations": stats.get("iterations", 0),
        "n_evaluations": len(solve_cache),
        "constraint": {"achieved": achieved, "target": C0},
    }
    return UnmixResult(AbundanceMap(A), NonlinearPart(Psi), residual, dual,
                       diagnostics)


def bmua_fine(Y: SpectralImage, M: EndmemberMatrix, A_D: np.ndarray,
              Psi_D: np.ndarray, consts: ScaleConstants,
              cfg: BmuaConfig = BmuaConfig(),
              gram: GramMatrix | None = None) -> UnmixResult:
    """Unmix the full image anchored to the expanded coarse estimates.

    The pair (mu1, mu2) is located by two-dimensional bisection (on log
    multipliers) of the residual pair (g1, g2); the per-pixel QPs carry
    both the reconstruction constraint C1 and the inter-scale deviation
    constraint CY - CE.
    """
    L, P, N = M.n_bands, M.n_endmembers, Y.n_pixels
    A_D = np.asarray(A_D, dtype=np.float64)
    Psi_D = np.asarray(Psi_D, dtype=np.float64)
    if A_D.shape != (P, N) or Psi_D.shape != (L, N):
        raise DataFormatError("anchor matrices do not match the image/endmembers")
    gap = consts.anchor_gap
    Kmat = gram if gram is not None else gram_matrix(M, cfg.kernel)
    sys_ = _FineSystem(Kmat.K, M.M, M.pinv)
    C = sys_.linear_terms(Y.data, M.M, M.pinv, A_D, Psi_D)

    solve_cache: dict[tuple, np.ndarray] = {}

    def solve_at(mu1: float, mu2: float) -> np.ndarray:
        key = (mu1, mu2)
        if key not in solve_cache:
            G = sys_.hessian(mu1, mu2)
            Omega, _ = maximize_concave_batch(G, C, sys_.nonneg,
                                              flat_dir=sys_.flat,
                                              kkt_tol=cfg.kkt_tol)
            solve_cache[key] = Omega
        return solve_cache[key]

    def context(Omega: np.ndarray) -> FineDualContext:
        return FineDualContext(
            Beta=Omega[:L], Mu3=Omega[L:L + P], Gamma=Omega[L + P:L + 2 * P],
            lam=Omega[-1], M=M.M, C1=consts.C1, cy_minus_ce=gap,
        )

    def g(u: float, v: float):
        mu1, mu2 = math.exp(u), math.exp(v)
        return g_fine_residuals(mu1, mu2, context(solve_at(mu1, mu2)))

    lo, hi = _log_bracket(cfg)
    step = math.log(cfg.bracket_expand_factor)
    rect = Bracket2D(lo, hi, lo, hi)
    stats: dict = {}
    for attempt in range(cfg.bracket_expand_attempts + 1):
        try:
            u, v = bisect_2d(g, rect, tol=cfg.fine_eps,
                             max_iter=cfg.fine_max_iter, stats=stats)
            break
        except BracketError:
            if attempt == cfg.bracket_expand_attempts:
                raise ConstraintError(
                    "no multiplier rectangle satisfies the sign condition for "
                    f"C1={consts.C1:.6e} and CY-CE={gap:.6e}"
                )
            rect = Bracket2D(rect.a1 - step, rect.a2 + step,
                             rect.b1 - step, rect.b2 + step)

    mu1, mu2 = math.exp(u), math.exp(v)
    Omega = solve_at(mu1, mu2)
    G = sys_.hessian(mu1, mu2)
    objective = float(quad_objective(G, C, Omega).sum()) \
        - N / 2.0 * (mu1 * consts.C1 + mu2 * gap)
    dual = DualSolution(Omega, (mu1, mu2), objective, L, P, "fine")

    A = _clip_to_simplex(dual.recover_abundances(M.M, A_D), cfg.clip_tol)
    coeffs = dual.nonlinear_coefficients(M.pinv)
    Psi = Kmat.K @ coeffs
    residual = Y.data - M.M @ A - Psi

    g1, g2 = g_fine_residuals(mu1, mu2, context(Omega))
    achieved_c1 = g1 / N + consts.C1
    achieved_gap = g2 / N + gap
    diagnostics = {
        "algorithm": "bmua-fine",
        "mu1": mu1,
        "mu2": mu2,
        "dual_objective": objective,
        "bisect_iterations": stats.get("iterations", 0),
        "n_evaluations": len(solve_cache),
        "constraints": {
            "reconstruction": {"achieved": achieved_c1, "target": consts.C1},
            "anchor": {"achieved": achieved_gap, "target": gap},
        },
    }
    return UnmixResult(AbundanceMap(A), NonlinearPart(Psi), residual, dual,
                       diagnostics)


# ---------------------------------------------------------------------------
# full pipeline

def bmua_n(Y: SpectralImage, M: EndmemberMatrix,
           cfg: BmuaConfig = BmuaConfig()) -> UnmixResult:
    """Blind multiscale nonlinear unmixing, end to end.

    Estimates the noise covariance, derives every constraint constant,
    picks the superpixel scale by spectral homogeneity, unmixes the coarse
    image, and refines at full resolution anchored to the coarse result.
    Stage failures are re-raised tagged with the stage name.
    """
    N = Y.n_pixels

    def run(stage, fn):
        try:
            return fn()
        except (UnmixError, np.linalg.LinAlgError) as exc:
            raise StageError(stage, exc) from exc

    noise = run("noise", lambda: estimate_noise_cov(Y))
    sigma_psi2 = cfg.sigma_psi2 if cfg.sigma_psi2 is not None \
        else default_sigma_psi2(Y)

    kmin = cfg.kmin if cfg.kmin is not None else max(1, round(N / 170))
    kmax = cfg.kmax if cfg.kmax is not None else max(1, round(N / 8))
    smap, profile = run("superpixels", lambda: segment_with_homogeneity(
        Y, kmin, kmax, cfg.hom_eps, compactness=cfg.compactness,
        prefer_larger_size=cfg.prefer_larger_size))
    S = N / smap.K
    S_noise = float(smap.K / np.sum(1.0 / smap.sizes))  # harmonic mean size

    Yc = coarsen(Y.data, smap)
    Y_D = expand(Yc, smap)
    consts = run("constants", lambda: scale_constants(
        Y, M.pinv, noise, Y_D, S, sigma_psi2, S_noise=S_noise))

    gramK = gram_matrix(M, cfg.kernel)

    # The default modeling-error energy is a tiny heuristic; when the model
    # cannot fit the coarse image down to C0 (strong unmodeled distortions),
    # raise sigma_psi2 to the measured shortfall so the residual targets
    # become attainable, and rebuild every constant from it.
    floor = run("coarse", lambda: coarse_residual_floor(Yc, M, cfg, gram=gramK))
    sigma_bumped = False
    if consts.C0 <= 1.1 * floor:
        sigma_psi2 = sigma_psi2 + 1.1 * floor - noise.trace / S_noise
        sigma_bumped = True
        warnings.warn(
            "residual target below the attainable coarse fit; raising the "
            f"modeling-error energy to {sigma_psi2:.3e}", RuntimeWarning,
        )
        consts = run("constants", lambda: scale_constants(
            Y, M.pinv, noise, Y_D, S, sigma_psi2, S_noise=S_noise))

    coarse = run("coarse", lambda: bmua_coarse(Yc, M, consts.C0, cfg, gram=gramK))
    A_D = expand(coarse.abundances.A, smap)
    Psi_D = expand(coarse.nonlinear.Psi, smap)
    fine = run("fine", lambda: bmua_fine(Y, M, A_D, Psi_D, consts, cfg,
                                         gram=gramK))

    diagnostics = {
        "algorithm": "bmua-n",
        "superpixels": {
            "K": smap.K,
            "mean_size": S,
            "bounds": [kmin, kmax],
            "profile": [[int(k), float(h)] for k, h in profile.candidates],
        },
        "constants": {
            "C0": consts.C0, "C1": consts.C1, "CY": consts.CY,
            "CE": consts.CE, "anchor_gap": consts.anchor_gap,
            "sigma_psi2": sigma_psi2, "sigma_psi2_bumped": sigma_bumped,
            "noise_trace": noise.trace,
        },
        "coarse": coarse.diagnostics,
        "fine": fine.diagnostics,
    }
    return UnmixResult(fine.abundances, fine.nonlinear, fine.residual,
                       fine.dual, diagnostics)
