"""Scratch numerical validation (not part of the deliverable)."""
import numpy as np
import itertools

from nlunmix.dual_solver import (QuadraticForm, solve_inner_qp,
                                 maximize_concave_batch, quad_objective,
                                 bisect_1d, bisect_2d, Bracket2D)
from nlunmix.data_model import EndmemberMatrix
from nlunmix.kernels import gram_matrix, KernelConfig
from nlunmix.simulation import synthetic_endmembers, SceneSpec, gen_abundances, mix, add_noise
from nlunmix.data_model import SpectralImage
from nlunmix.unmixers import khype, fcls, _CoarseSystem, _FineSystem, bmua_coarse, bmua_fine, BmuaConfig
from nlunmix.statistics import ScaleConstants
from nlunmix.metrics import rmse


def enum_oracle(B, c, nonneg):
    """Brute force: try all active patterns, keep best feasible candidate."""
    n = B.shape[0]
    G = -2.0 * B
    best, best_val = None, -np.inf
    for r in range(len(nonneg) + 1):
        for comb in itertools.combinations(range(len(nonneg)), r):
            act = [nonneg[j] for j in comb]
            free = [i for i in range(n) if i not in act]
            Gff = G[np.ix_(free, free)]
            try:
                wf = np.linalg.solve(Gff, c[free])
            except np.linalg.LinAlgError:
                continue
            w = np.zeros(n)
            w[free] = wf
            if np.all(w[nonneg] >= -1e-10):
                val = w @ B @ w + c @ w
                if val > best_val:
                    best_val, best = val, w
    return best, best_val


rng = np.random.default_rng(0)
print("== inner QP vs enumeration oracle ==")
worst = 0.0
for t in range(100):
    n = rng.integers(2, 7)
    A = rng.standard_normal((n, n))
    B = -(A @ A.T + (0.1 + rng.random()) * np.eye(n))
    c = rng.standard_normal(n) * 3
    k = rng.integers(0, n + 1)
    nonneg = np.sort(rng.choice(n, size=k, replace=False))
    q = QuadraticForm(B, c, nonneg)
    w = solve_inner_qp(q)
    wo, vo = enum_oracle(B, c, list(nonneg))
    dev = np.abs(w - wo).max()
    worst = max(worst, dev)
assert worst < 1e-8, worst
print(f"   max deviation over 100 instances: {worst:.2e}")

print("== K-Hype structure on noiseless LMM ==")
L, P, N = 20, 3, 40
M = EndmemberMatrix(synthetic_endmembers(L, P, seed=1))
spec = SceneSpec(width=N, height=1, n_endmembers=P, model="lmm", seed=2, smoothness=1.0)
A = gen_abundances(spec)
img = mix(M, A, "lmm", width=N, height=1)
res = khype(img, M, 1e-3)
print("   sum-to-one err:", np.abs(res.abundances.A.sum(0) - 1).max())
print("   min abundance :", res.abundances.A.min())
# reconstruction identity with dual-predicted residual
xi_dual = res.dual.residuals()
recon = M.M @ res.dual.recover_abundances(M.M) + gram_matrix(M).K @ res.dual.beta + xi_dual
print("   identity err  :", np.abs(recon - img.data).max())
print("   RMSE_A khype(mu=1e-3) noiseless:", rmse(A.A, res.abundances.A))
resf = fcls(img, M)
print("   RMSE_A fcls noiseless:", rmse(A.A, resf.abundances.A))

print("== coarse stage + duality ==")
rng = np.random.default_rng(5)
L, P, K = 12, 3, 3
M2 = EndmemberMatrix(np.abs(rng.random((L, P))) + 0.05)
Yc = rng.random((L, K)) * 0.8
Kg = gram_matrix(M2)
# pick mu0*, solve inner, derive C0 so that mu0* is the root
sysc = _CoarseSystem(Kg.K, M2.M)
mu0_star = 2.0
G = sysc.hessian(1.0 / mu0_star)
C = sysc.linear_terms(Yc)
Om, _ = maximize_concave_batch(G, C, sysc.nonneg, flat_dir=sysc.flat)
C0 = float(np.einsum("ij,ij->", Om[:L], Om[:L])) / (mu0_star ** 2 * K)
cfg = BmuaConfig(coarse_max_iter=80, coarse_tol=0.0, coarse_f_tol_rel=0.0)
resc = bmua_coarse(Yc, M2, C0, cfg)
mu0 = resc.dual.mu[0]
print(f"   mu0* = {mu0_star}, found {mu0:.8f}")
# primal objective: 0.5*sum(beta'Kbeta + ||a||^2) at recovered primal
beta = resc.dual.beta
a = resc.dual.recover_abundances(M2.M)
primal = 0.5 * (np.einsum("ij,ij->", beta, Kg.K @ beta) + np.einsum("ij,ij->", a, a))
print(f"   primal {primal:.10f} dual {resc.dual.objective:.10f} gap {abs(primal - resc.dual.objective) / max(abs(primal), 1e-12):.2e}")

print("== fine stage + duality ==")
N2 = 3
Y2 = rng.random((L, N2)) * 0.8
img2 = SpectralImage(Y2, N2, 1)
A_D = rng.dirichlet(np.ones(P), size=N2).T
Psi_D = 0.05 * rng.standard_normal((L, N2))
sysf = _FineSystem(Kg.K, M2.M, M2.pinv)
mu1s, mu2s = 1.7, 3.1
Gf = sysf.hessian(mu1s, mu2s)
Cf = sysf.linear_terms(Y2, M2.M, M2.pinv, A_D, Psi_D)
Omf, _ = maximize_concave_batch(Gf, Cf, sysf.nonneg, flat_dir=sysf.flat)
Beta, Mu3 = Omf[:L], Omf[L:L+P]
Gamma, lam = Omf[L+P:L+2*P], Omf[-1]
C1 = float(np.einsum("ij,ij->", Beta, Beta)) / (mu1s**2 * N2)
V = M2.M.T @ Beta + Gamma - lam[None, :]
gap_t = (float(np.einsum("ij,ij->", V, V)) + float(np.einsum("ij,ij->", Mu3, Mu3))) / (mu2s**2 * N2)
consts = ScaleConstants(C0=1.0, C1=C1, CY=gap_t, CE=0.0, sigma_psi2=0.0, S=4.0)
cfgf = BmuaConfig(fine_max_iter=60, fine_eps=0.0)
resf2 = bmua_fine(img2, M2, A_D, Psi_D, consts, cfgf)
mu1, mu2 = resf2.dual.mu
print(f"   (mu1*, mu2*) = ({mu1s}, {mu2s}), found ({mu1:.6f}, {mu2:.6f})")
b = resf2.dual.nonlinear_coefficients(M2.pinv)
primalf = 0.5 * np.einsum("ij,ij->", b, Kg.K @ b)
print(f"   primal {primalf:.10f} dual {resf2.dual.objective:.10f} gap {abs(primalf - resf2.dual.objective) / max(abs(primalf), 1e-12):.2e}")
af = resf2.abundances.A
print("   fine simplex: sum err", np.abs(af.sum(0)-1).max(), "min", af.min())
