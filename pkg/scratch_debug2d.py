import numpy as np
import math
from nlunmix.data_model import EndmemberMatrix, SpectralImage
from nlunmix.kernels import gram_matrix
from nlunmix.unmixers import _FineSystem, BmuaConfig
from nlunmix.dual_solver import maximize_concave_batch, g_fine_residuals, FineDualContext

rng = np.random.default_rng(5)
L, P, N2 = 12, 3, 3
M2 = EndmemberMatrix(np.abs(rng.random((L, P))) + 0.05)
Yc = rng.random((L, 3)) * 0.8  # burn rng draws to mirror the earlier script
Y2 = rng.random((L, N2)) * 0.8
A_D = rng.dirichlet(np.ones(P), size=N2).T
Psi_D = 0.05 * rng.standard_normal((L, N2))
Kg = gram_matrix(M2)
sysf = _FineSystem(Kg.K, M2.M, M2.pinv)
Cf = sysf.linear_terms(Y2, M2.M, M2.pinv, A_D, Psi_D)

def solve(mu1, mu2):
    G = sysf.hessian(mu1, mu2)
    Om, _ = maximize_concave_batch(G, Cf, sysf.nonneg, flat_dir=sysf.flat)
    return Om

mu1s, mu2s = 1.7, 3.1
Om = solve(mu1s, mu2s)
Beta, Mu3 = Om[:L], Om[L:L+P]
Gamma, lam = Om[L+P:L+2*P], Om[-1]
C1 = float(np.einsum("ij,ij->", Beta, Beta)) / (mu1s**2 * N2)
V = M2.M.T @ Beta + Gamma - lam[None, :]
gap = (float(np.einsum("ij,ij->", V, V)) + float(np.einsum("ij,ij->", Mu3, Mu3))) / (mu2s**2 * N2)
print("C1", C1, "gap", gap)

def g(u, v):
    mu1, mu2 = math.exp(u), math.exp(v)
    Om = solve(mu1, mu2)
    ctx = FineDualContext(Beta=Om[:L], Mu3=Om[L:L+P], Gamma=Om[L+P:L+2*P],
                          lam=Om[-1], M=M2.M, C1=C1, cy_minus_ce=gap)
    return g_fine_residuals(mu1, mu2, ctx)

print("at root:", g(math.log(mu1s), math.log(mu2s)))
lo, hi = math.log(1e-4), math.log(1e4)
for (u, v) in [(lo, lo), (hi, lo), (lo, hi), (hi, hi)]:
    print(f"corner mu1=e^{u:.1f} mu2=e^{v:.1f}:", g(u, v))

# grid of signs
us = np.linspace(lo, hi, 7)
for v in np.linspace(hi, lo, 7):
    row = ""
    for u in us:
        g1, g2 = g(u, v)
        row += {(True, True): "++", (True, False): "+-", (False, True): "-+", (False, False): "--"}[(g1 > 0, g2 > 0)] + " "
    print(f"v={v:6.2f} : {row}")
