import time
import numpy as np
from nlunmix.data_model import EndmemberMatrix
from nlunmix.simulation import SceneSpec, generate_scene, synthetic_endmembers
from nlunmix.unmixers import bmua_n, khype_grid, fcls, BmuaConfig
from nlunmix.metrics import rmse

M = EndmemberMatrix(synthetic_endmembers(224, 3, seed=1))

for model, snr in (("blmm", 20.0), ("pnmm", 30.0)):
    for seed in range(3):
        spec = SceneSpec(width=50, height=50, n_endmembers=3, model=model,
                         snr_db=snr, seed=seed)
        noisy, clean, A, _, _ = generate_scene(spec, M=M)
        t0 = time.time()
        e_f = rmse(A.A, fcls(noisy, M).abundances.A)
        t1 = time.time()
        mu, best, _ = khype_grid(noisy, M, truth=A)
        e_k = rmse(A.A, best.abundances.A)
        t2 = time.time()
        res = bmua_n(noisy, M)
        e_b = rmse(A.A, res.abundances.A)
        t3 = time.time()
        d = res.diagnostics
        cc = d["coarse"]["constraint"]
        fc = d["fine"]["constraints"]
        print(f"{model} {snr:.0f}dB seed{seed}: fcls={e_f:.4f}({t1-t0:.0f}s) "
              f"khype={e_k:.4f}@mu={mu}({t2-t1:.0f}s) bmua={e_b:.4f}({t3-t2:.0f}s)")
        print(f"   K={d['superpixels']['K']} S={d['superpixels']['mean_size']:.1f} "
              f"C0rel={abs(cc['achieved']-cc['target'])/cc['target']:.3f} "
              f"C1rel={abs(fc['reconstruction']['achieved']-fc['reconstruction']['target'])/fc['reconstruction']['target']:.3f} "
              f"gaprel={abs(fc['anchor']['achieved']-fc['anchor']['target'])/max(fc['anchor']['target'],1e-12):.3f} "
              f"mu0={d['coarse']['mu0']:.3g} mu1={d['fine']['mu1']:.3g} mu2={d['fine']['mu2']:.3g} "
              f"it_c={d['coarse']['bisect_iterations']} it_f={d['fine']['bisect_iterations']}")
