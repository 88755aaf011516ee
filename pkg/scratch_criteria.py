import time
import numpy as np
from nlunmix.data_model import EndmemberMatrix
from nlunmix.simulation import SceneSpec, generate_scene, synthetic_endmembers
from nlunmix.unmixers import bmua_n, khype_grid, fcls
from nlunmix.metrics import rmse

M = EndmemberMatrix(synthetic_endmembers(224, 3, seed=1))

for model, snr, nseeds in (("blmm", 20.0, 10), ("pnmm", 30.0, 10)):
    t0 = time.time()
    rows = []
    for seed in range(nseeds):
        spec = SceneSpec(width=50, height=50, n_endmembers=3, model=model,
                         snr_db=snr, seed=seed)
        noisy, clean, A, _, _ = generate_scene(spec, M=M)
        e_f = rmse(A.A, fcls(noisy, M).abundances.A)
        _, best, _ = khype_grid(noisy, M, truth=A)
        e_k = rmse(A.A, best.abundances.A)
        res = bmua_n(noisy, M)
        e_b = rmse(A.A, res.abundances.A)
        d = res.diagnostics
        cc = d["coarse"]["constraint"]; fc = d["fine"]["constraints"]["reconstruction"]
        c0rel = abs(cc['achieved']-cc['target'])/cc['target']
        c1rel = abs(fc['achieved']-fc['target'])/fc['target']
        rows.append((e_b, e_k, e_f, c0rel, c1rel))
        print(f"{model} seed{seed}: bmua={e_b:.4f} khype={e_k:.4f} fcls={e_f:.4f} "
              f"c0rel={c0rel:.3f} c1rel={c1rel:.3f} "
              f"it=({d['coarse']['bisect_iterations']},{d['fine']['bisect_iterations']})")
    rows = np.array(rows)
    full = np.sum((rows[:, 0] < rows[:, 1]) & (rows[:, 1] < rows[:, 2]))
    bk = np.sum(rows[:, 0] < rows[:, 1]); bf = np.sum(rows[:, 0] < rows[:, 2])
    print(f"== {model} {snr}dB: bmua<khype<fcls in {full}/{nseeds}; "
          f"bmua<khype {bk}/{nseeds}; bmua<fcls {bf}/{nseeds}; "
          f"max c0rel {rows[:,3].max():.3f} max c1rel {rows[:,4].max():.3f}; "
          f"elapsed {time.time()-t0:.0f}s")
