import numpy as np
import time
from nlunmix.data_model import EndmemberMatrix
from nlunmix.kernels import KernelConfig
from nlunmix.simulation import synthetic_endmembers, SceneSpec, gen_abundances, mix, add_noise
from nlunmix.unmixers import khype, fcls
from nlunmix.metrics import rmse

GRID = (0.001, 0.002, 0.005, 0.01, 0.02, 0.1, 1.0)

L, P = 224, 3
M = EndmemberMatrix(synthetic_endmembers(L, P, seed=1))
Q, _ = np.linalg.qr(M.M)
for i in range(P - 1):
    for j in range(i + 1, P):
        prod = M.M[:, i] * M.M[:, j]
        r = np.linalg.norm(prod - Q @ (Q.T @ prod)) / np.linalg.norm(prod)
        print(f"product {i}{j}: out-of-span fraction {r:.3f}")
print("cond(M) =", np.linalg.cond(M.M))

# noiseless LMM check at full band count
spec0 = SceneSpec(width=30, height=30, n_endmembers=P, model="lmm", seed=3, smoothness=5.0)
A0 = gen_abundances(spec0)
img0 = mix(M, A0, "lmm", width=30, height=30)
for c in (1.0, 0.0):
    r = khype(img0, M, 1e-3, KernelConfig(2, c))
    print(f"noiseless LMM khype c={c}: RMSE_A = {rmse(A0.A, r.abundances.A):.5f}")
print(f"noiseless LMM fcls: RMSE_A = {rmse(A0.A, fcls(img0, M).abundances.A):.2e}")

for model, snr in (("blmm", 20.0), ("pnmm", 30.0)):
    wins = []
    for seed in range(3):
        spec = SceneSpec(width=50, height=50, n_endmembers=P, model=model, snr_db=snr,
                         seed=seed, smoothness=5.0)
        A = gen_abundances(spec)
        clean = mix(M, A, model, width=50, height=50)
        noisy, _ = add_noise(clean, snr, seed=seed + 100)
        t0 = time.time()
        e_f = rmse(A.A, fcls(noisy, M).abundances.A)
        best = None
        for mu_ in GRID:
            r = khype(noisy, M, mu_, KernelConfig(2, 0.0))
            e = rmse(A.A, r.abundances.A)
            best = e if best is None else min(best, e)
        print(f"{model} {snr}dB seed {seed}: fcls={e_f:.4f} khype_best={best:.4f} ({time.time()-t0:.1f}s)")
