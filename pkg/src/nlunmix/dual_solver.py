"""Inner concave QP maximization and multiplier search by bisection.

For a fixed set of scale multipliers, every pixel (or superpixel)
contributes an independent small quadratic maximization over its dual
vector, with nonnegativity on the abundance-sign multipliers gamma.  The
multipliers themselves are then located as roots of the constraint
residual functions g0 (coarse scale) and (g1, g2) (original scale) using
scalar or two-dimensional bisection.

All pixel problems at a fixed multiplier share the same Hessian, so the
active-set solver here runs them as one batch: each outer iteration groups
pixels by working set, factors each reduced Hessian once, and solves all
right-hand sides of the group together.

The dual Hessians of the unmixing problems are negative semidefinite with
a one-dimensional flat direction (raising every gamma and lambda together
leaves the quadratic part unchanged).  The solver accepts that direction
explicitly and walks along it until a nonnegativity bound activates, which
is exact because the objective is linear there.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import BracketError, ConvergenceError


@dataclass(frozen=True)
class QuadraticForm:
    """A strictly concave objective w' B w + c w with optional
    nonnegativity on the coordinates listed in nonneg_idx."""

    B: np.ndarray
    c: np.ndarray
    nonneg_idx: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64).ravel()
        nn = np.asarray(self.nonneg_idx, dtype=np.int64).ravel()
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "nonneg_idx", nn)
        n = B.shape[0]
        if B.shape != (n, n) or c.shape[0] != n:
            raise ValueError("B and c dimensions disagree")
        if np.abs(B - B.T).max(initial=0.0) > 1e-10:
            raise ValueError("B must be symmetric")
        if np.linalg.eigvalsh(B).max() > -1e-12:
            raise ValueError("B must be strictly negative definite")
        if nn.size and (nn.min() < 0 or nn.max() >= n):
            raise ValueError("nonneg_idx out of range")


def quad_objective(G: np.ndarray, C: np.ndarray, Omega: np.ndarray) -> np.ndarray:
    """Per-column value of -0.5 w'Gw + c'w."""
    return -0.5 * np.einsum("ij,ij->j", Omega, G @ Omega) + np.einsum(
        "ij,ij->j", C, Omega
    )


def maximize_concave_batch(G, C, nonneg_idx, flat_dir=None, kkt_tol=1e-8,
                           max_outer=None):
    """Maximize -0.5 w'Gw + c'w per column of C with w[nonneg_idx] >= 0.

    G is symmetric PSD; it must be positive definite on every subspace that
    pins at least one nonnegative coordinate.  When G is singular its null
    space must be spanned by ``flat_dir`` (with positive entries on the
    nonnegative coordinates), so an empty working set can be handled by a
    line step along the flat direction.

    Returns (Omega, n_outer) with Omega of shape (n, m).
    """
    G = np.asarray(G, dtype=np.float64)
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    if C.shape[0] != G.shape[0]:
        C = C.T.copy()
    n, m = C.shape
    nn = np.asarray(nonneg_idx, dtype=np.int64).ravel()
    p = nn.size
    scale = 1.0 + np.abs(C).max(axis=0)

    if p == 0:
        cf = _factor(G)
        return cho_solve(cf, C), 1
    if p >= 63:
        raise ValueError("too many nonnegative coordinates for bitmask grouping")

    if flat_dir is not None:
        flat_dir = np.asarray(flat_dir, dtype=np.float64).ravel()

    Omega = np.zeros((n, m))
    active = np.ones((p, m), dtype=bool)
    converged = np.zeros(m, dtype=bool)
    bit = (1 << np.arange(p, dtype=np.int64))
    factors = {}
    if max_outer is None:
        max_outer = 50 + 10 * p

    outer = 0
    while not converged.all():
        outer += 1
        if outer > max_outer:
            raise ConvergenceError(
                f"inner QP active set did not settle in {max_outer} iterations"
            )
        work = np.flatnonzero(~converged)
        masks = bit @ active[:, work]
        for mask in np.unique(masks):
            cols = work[masks == mask]
            act = (mask >> np.arange(p)) & 1 == 1
            if mask == 0 and flat_dir is not None:
                # G is singular along flat_dir, so the free problem has no
                # stationary point; walk the flat ray instead.
                _flat_step(G, C, Omega, nn, active, cols, flat_dir)
                continue
            if mask not in factors:
                free = np.setdiff1d(np.arange(n), nn[act]) if mask else np.arange(n)
                factors[mask] = (_factor(G[np.ix_(free, free)]), free)
            cf, free = factors[mask]
            target = np.zeros((n, cols.size))
            target[free] = cho_solve(cf, C[np.ix_(free, cols)])

            free_nn = nn[~act]
            D = target - Omega[:, cols]
            if free_nn.size:
                Df = D[free_nn]
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratios = np.where(Df < 0, Omega[np.ix_(free_nn, cols)] / -Df, np.inf)
                jmin = np.argmin(ratios, axis=0)
                alpha = np.minimum(ratios[jmin, np.arange(cols.size)], 1.0)
            else:
                alpha = np.ones(cols.size)
                jmin = None

            full = alpha >= 1.0 - 1e-12
            if full.any():
                fc = cols[full]
                Omega[:, fc] = target[:, full]
                if free_nn.size:
                    sub = np.ix_(free_nn, fc)
                    Omega[sub] = np.maximum(Omega[sub], 0.0)
                _kkt_release(G, C, Omega, nn, act, active, converged, fc,
                             kkt_tol * scale[fc])
            part = ~full
            if part.any():
                pc = cols[part]
                Omega[:, pc] += alpha[part] * D[:, part]
                jstar = jmin[part]
                block_coord = np.array([np.flatnonzero(~act)[j] for j in jstar])
                active[block_coord, pc] = True
                Omega[nn[block_coord], pc] = 0.0
    return Omega, outer


def _factor(A):
    try:
        return cho_factor(A, lower=True, check_finite=False)
    except LinAlgError:
        jitter = 1e-12 * max(float(np.trace(A)) / A.shape[0], 1.0)
        return cho_factor(A + jitter * np.eye(A.shape[0]), lower=True,
                          check_finite=False)


def _flat_step(G, C, Omega, nn, active, cols, flat_dir):
    """Working set went empty on a singular Hessian: walk along the flat
    direction until a nonnegative coordinate hits its bound."""
    if flat_dir is None:
        raise ConvergenceError(
            "singular Hessian with empty working set and no flat direction"
        )
    slope = C[:, cols].T @ flat_dir  # d/dt of the objective along +flat_dir
    if np.any(slope >= 0):
        raise ConvergenceError("inner QP is unbounded along the flat direction")
    d_nn = flat_dir[nn]
    pos = d_nn > 0
    if not pos.any():
        raise ConvergenceError("flat direction never activates a bound")
    vals = Omega[np.ix_(nn[pos], cols)] / d_nn[pos, None]
    jmin = np.argmin(vals, axis=0)
    t = vals[jmin, np.arange(cols.size)]
    Omega[:, cols] -= flat_dir[:, None] * t
    coord = np.flatnonzero(pos)[jmin]
    active[coord, cols] = True
    Omega[nn[coord], cols] = 0.0


def _kkt_release(G, C, Omega, nn, act, active, converged, cols, tol):
    """At an EQP optimum: mark converged, or release the most violated
    pinned coordinate (one per problem per outer iteration)."""
    act_idx = nn[act]
    if act_idx.size == 0:
        converged[cols] = True
        return
    grad = C[np.ix_(act_idx, cols)] - G[act_idx] @ Omega[:, cols]
    jmax = np.argmax(grad, axis=0)
    gmax = grad[jmax, np.arange(cols.size)]
    done = gmax <= tol
    converged[cols[done]] = True
    rel = ~done
    if rel.any():
        coord = np.flatnonzero(act)[jmax[rel]]
        active[coord, cols[rel]] = False


def solve_inner_qp(q: QuadraticForm, kkt_tol: float = 1e-8,
                   max_outer: int | None = None) -> np.ndarray:
    """Argmax of w'Bw + cw subject to w[nonneg_idx] >= 0.

    Uses the batched active-set engine with a single right-hand side; the
    KKT residual of the result is below kkt_tol * (1 + |c|_inf).
    """
    G = -2.0 * q.B
    Omega, _ = maximize_concave_batch(G, q.c[:, None], q.nonneg_idx,
                                      kkt_tol=kkt_tol, max_outer=max_outer)
    return Omega[:, 0]


@dataclass(frozen=True)
class CoarseDualContext:
    """Solved coarse duals needed by the g0 residual."""

    Beta: np.ndarray  # (L, K) dual beta vectors at the current mu0
    C0: float

    @property
    def K(self) -> int:
        return self.Beta.shape[1]


def g0_residual(mu0: float, context: CoarseDualContext) -> float:
    """Coarse constraint residual: sum |beta_i|^2 / mu0^2 - K * C0.

    Its root in mu0 is where the recovered residuals beta_i / mu0 carry
    exactly the prescribed mean energy C0.
    """
    if mu0 <= 0:
        raise ValueError("mu0 must be positive")
    s = float(np.einsum("ij,ij->", context.Beta, context.Beta))
    return s / mu0**2 - context.K * context.C0


@dataclass(frozen=True)
class FineDualContext:
    """Solved fine-scale duals and constants needed by (g1, g2)."""

    Beta: np.ndarray   # (L, N)
    Mu3: np.ndarray    # (P, N)
    Gamma: np.ndarray  # (P, N)
    lam: np.ndarray    # (N,)
    M: np.ndarray      # (L, P)
    C1: float
    cy_minus_ce: float

    @property
    def N(self) -> int:
        return self.Beta.shape[1]


def g_fine_residuals(mu1: float, mu2: float, context: FineDualContext):
    """Residuals of both fine-scale constraints at (mu1, mu2).

    g1 tracks the reconstruction-error energy against C1; g2 tracks the
    inter-scale deviation energy (abundance step plus nonlinear step)
    against CY - CE.
    """
    if mu1 <= 0 or mu2 <= 0:
        raise ValueError("multipliers must be positive")
    g1 = float(np.einsum("ij,ij->", context.Beta, context.Beta)) / mu1**2 \
        - context.N * context.C1
    V = context.M.T @ context.Beta + context.Gamma - context.lam[None, :]
    s2 = float(np.einsum("ij,ij->", V, V)) + float(
        np.einsum("ij,ij->", context.Mu3, context.Mu3))
    g2 = s2 / mu2**2 - context.N * context.cy_minus_ce
    return g1, g2


def bisect_1d(f, lo: float, hi: float, tol: float = 1e-6, max_iter: int = 60,
              f_tol: float = 0.0, stats: dict | None = None) -> float:
    """Scalar bisection on [lo, hi]; f(lo) and f(hi) must differ in sign.

    Stops when the bracket width falls below tol times the initial width,
    when |f| falls to f_tol, or after max_iter halvings; returns the final
    bracket midpoint.  When given, ``stats`` receives the iteration count.
    """
    if not lo < hi:
        raise BracketError(f"invalid bracket [{lo}, {hi}]")
    flo, fhi = f(lo), f(hi)
    if stats is not None:
        stats["iterations"] = 0
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(
            f"no sign change on [{lo}, {hi}]: f(lo)={flo:.3e}, f(hi)={fhi:.3e}"
        )
    width0 = hi - lo
    for it in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if stats is not None:
            stats["iterations"] = it + 1
        if abs(fm) <= f_tol:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
        if hi - lo <= tol * width0:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Bracket2D:
    """Axis-aligned rectangle (a1, a2) x (b1, b2) for 2-D bisection."""

    a1: float
    a2: float
    b1: float
    b2: float

    def __post_init__(self):
        if not (self.a1 < self.a2 and self.b1 < self.b2):
            raise BracketError("rectangle corners must satisfy a1 < a2 and b1 < b2")

    def corners(self):
        return ((self.a1, self.b1), (self.a2, self.b1),
                (self.a1, self.b2), (self.a2, self.b2))


def _sign_varies(values) -> bool:
    v = np.asarray(values, dtype=np.float64)
    return not (np.all(v > 0) or np.all(v < 0))


def bisect_2d(g, rect: Bracket2D, tol: float = 0.1, max_iter: int = 10,
              stats: dict | None = None):
    """Two-dimensional bisection for a pair of residual functions.

    The rectangle is halved alternately along each coordinate; the half on
    which the sign of both components varies over the four vertices (the
    corner form of the Poincare-Miranda condition) is kept.  Stops after
    max_iter iterations or when the relative movement of the rectangle
    center drops below tol, and returns the final center.

    Raises BracketError when the initial rectangle fails the corner test.
    Evaluations are cached, so corners shared between iterations cost
    nothing.  When given, ``stats`` receives the iteration count.
    """
    cache = {}

    def ev(a, b):
        key = (a, b)
        if key not in cache:
            cache[key] = tuple(g(a, b))
        return cache[key]

    vals = [ev(a, b) for a, b in rect.corners()]
    for comp in (0, 1):
        if not _sign_varies([v[comp] for v in vals]):
            raise BracketError(
                f"component {comp + 1} has constant sign on the initial rectangle"
            )

    a1, a2, b1, b2 = rect.a1, rect.a2, rect.b1, rect.b2
    center_prev = None
    if stats is not None:
        stats["iterations"] = 0
    for it in range(max_iter):
        ac = 0.5 * (a1 + a2)
        vals = [ev(a1, b1), ev(ac, b1), ev(a1, b2), ev(ac, b2)]
        if all(_sign_varies([v[comp] for v in vals]) for comp in (0, 1)):
            a2 = ac
        else:
            a1 = ac

        bc = 0.5 * (b1 + b2)
        vals = [ev(a1, b1), ev(a2, b1), ev(a1, bc), ev(a2, bc)]
        if all(_sign_varies([v[comp] for v in vals]) for comp in (0, 1)):
            b2 = bc
        else:
            b1 = bc

        center = np.array([0.5 * (a1 + a2), 0.5 * (b1 + b2)])
        if stats is not None:
            stats["iterations"] = it + 1
        if center_prev is not None:
            denom = max(float(np.linalg.norm(center_prev)), 1e-300)
            if float(np.linalg.norm(center - center_prev)) / denom < tol:
                center_prev = center
                break
        center_prev = center
    return float(center_prev[0]), float(center_prev[1])


@dataclass(frozen=True)
class DualSolution:
    """Per-block dual vectors plus the scale multipliers.

    omega holds one column per pixel/superpixel with layout
    [beta (L); gamma (P); lambda (1)] at the coarse scale and
    [beta (L); mu3 (P); gamma (P); lambda (1)] at the original scale.
    """

    omega: np.ndarray
    mu: tuple
    objective: float
    n_bands: int
    n_endmembers: int
    kind: str  # "coarse" or "fine"

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=np.float64)
        object.__setattr__(self, "omega", omega)
        if self.kind not in ("coarse", "fine"):
            raise ValueError("kind must be 'coarse' or 'fine'")
        expect = self.n_bands + self.n_endmembers + 1
        if self.kind == "fine":
            expect += self.n_endmembers
        if omega.shape[0] != expect:
            raise ValueError("omega layout does not match the declared kind")
        if self.gamma.min(initial=0.0) < -1e-9:
            warnings.warn("dual gamma has negative entries beyond tolerance",
                          RuntimeWarning)
        if any(m <= 0 for m in self.mu):
            warnings.warn(
                "a scale multiplier is not strictly positive; the zero-gap "
                "guarantee does not apply", RuntimeWarning,
            )

    @property
    def beta(self) -> np.ndarray:
        return self.omega[: self.n_bands]

    @property
    def mu3(self) -> np.ndarray:
        if self.kind != "fine":
            raise AttributeError("mu3 exists only for fine-scale solutions")
        return self.omega[self.n_bands: self.n_bands + self.n_endmembers]

    @property
    def gamma(self) -> np.ndarray:
        off = self.n_bands + (self.n_endmembers if self.kind == "fine" else 0)
        return self.omega[off: off + self.n_endmembers]

    @property
    def lam(self) -> np.ndarray:
        return self.omega[-1]

    def recover_abundances(self, M: np.ndarray, A_D: np.ndarray | None = None) -> np.ndarray:
        """Primal abundances: M'beta + gamma - lambda at the coarse scale,
        or the anchored update A_D + (1/mu2)(M'beta + gamma - lambda)."""
        V = M.T @ self.beta + self.gamma - self.lam[None, :]
        if self.kind == "coarse":
            return V
        if A_D is None:
            raise ValueError("fine-scale recovery needs the anchor abundances")
        return A_D + V / self.mu[1]

    def nonlinear_coefficients(self, pinv: np.ndarray | None = None) -> np.ndarray:
        """Kernel-expansion coefficients of the recovered nonlinear part."""
        if self.kind == "coarse":
            return self.beta
        if pinv is None:
            raise ValueError("fine-scale recovery needs the pseudo-inverse")
        return self.beta - pinv.T @ self.mu3

    def residuals(self) -> np.ndarray:
        """Dual-predicted reconstruction residuals beta / mu."""
        return self.beta / self.mu[0]
