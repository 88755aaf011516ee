import numpy as np
import cvxpy as cp
from nlunmix.data_model import EndmemberMatrix, SpectralImage
from nlunmix.kernels import gram_matrix, KernelConfig
from nlunmix.simulation import synthetic_endmembers, SceneSpec, gen_abundances, mix, add_noise
from nlunmix.unmixers import khype, fcls
from nlunmix.metrics import rmse

L, P, N = 40, 3, 30
M = EndmemberMatrix(synthetic_endmembers(L, P, seed=1))
spec = SceneSpec(width=N, height=1, n_endmembers=P, model="lmm", seed=2, smoothness=1.0)
A = gen_abundances(spec)
img = mix(M, A, "lmm", width=N, height=1)

# --- cvxpy ground truth for one pixel, c=1 kernel, Eq-(5)-style objective
mu = 1e-3
Kg = gram_matrix(M, KernelConfig(2, 1.0)).K
y = img.data[:, 0]
a = cp.Variable(P)
beta = cp.Variable(L)  # psi values = Kg @ beta
xi = y - M.M @ a - Kg @ beta
obj = 0.5 * (cp.sum_squares(a) + cp.quad_form(beta, cp.psd_wrap(Kg)) + cp.sum_squares(xi) / mu)
prob = cp.Problem(cp.Minimize(obj), [a >= 0, cp.sum(a) == 1])
prob.solve(solver=cp.CLARABEL)
res1 = khype(img, M, mu, KernelConfig(2, 1.0))
print("cvxpy a*      :", np.round(a.value, 6))
print("dual  a*      :", np.round(res1.abundances.A[:, 0], 6))
print("true  a       :", np.round(A.A[:, 0], 6))
print("cvxpy obj     :", prob.value)
bd = res1.dual.beta[:, 0]
ad = res1.abundances.A[:, 0]
xid = y - M.M @ ad - Kg @ bd
primal_dual = 0.5 * (ad @ ad + bd @ Kg @ bd + xid @ xid / mu)
print("dual-sol obj  :", primal_dual)

for c in (1.0, 0.0):
    res = khype(img, M, mu, KernelConfig(2, c))
    print(f"khype c={c}: RMSE_A noiseless = {rmse(A.A, res.abundances.A):.6f}")

# --- BLMM 20dB comparison
spec2 = SceneSpec(width=30, height=30, n_endmembers=P, model="blmm", snr_db=20, seed=7, smoothness=5.0)
A2 = gen_abundances(spec2)
clean2 = mix(M, A2, "blmm", width=30, height=30)
noisy2, _ = add_noise(clean2, 20.0, seed=8)
rf = fcls(noisy2, M)
print(f"\nBLMM 20dB 30x30: fcls RMSE_A = {rmse(A2.A, rf.abundances.A):.4f}")
for c in (1.0, 0.0):
    best = None
    for mu_ in (0.001, 0.002, 0.005, 0.01, 0.02, 0.1, 1.0):
        r = khype(noisy2, M, mu_, KernelConfig(2, c))
        e = rmse(A2.A, r.abundances.A)
        best = min(best, e) if best is not None else e
    print(f"BLMM 20dB 30x30: khype c={c} best-grid RMSE_A = {best:.4f}")
