import numpy as np
from nlunmix.data_model import EndmemberMatrix, SpectralImage
from nlunmix.kernels import KernelConfig
from nlunmix.simulation import SceneSpec, gen_abundances, mix, add_noise
from nlunmix.unmixers import khype, fcls
from nlunmix.metrics import rmse
from scipy.ndimage import gaussian_filter

GRID = (0.001, 0.002, 0.005, 0.01, 0.02, 0.1, 1.0)
L, P = 224, 3
x = np.linspace(0, 1, L)

def spectra(style, seed):
    rng = np.random.default_rng(seed)
    M = np.empty((L, P))
    for p in range(P):
        s = np.zeros(L)
        for _ in range(10):
            c = rng.uniform(0, 1); w = rng.uniform(0.01, 0.08)
            s += rng.choice([-1., 1.]) * rng.uniform(0.2, 1.0) / (1 + np.exp(-(x - c)/w))
        if style == "lin":
            lo, hi = s.min(), s.max()
            M[:, p] = 0.05 + 0.9 * (s - lo) / max(hi - lo, 1e-9)
        elif style == "bright":
            lo, hi = s.min(), s.max()
            M[:, p] = 0.3 + 0.68 * (s - lo) / max(hi - lo, 1e-9)
        elif style == "stretch":
            s = (s - s.mean()) / max(s.std(), 1e-9)
            M[:, p] = 0.03 + 0.94 / (1 + np.exp(-4.0 * s))
        elif style == "bstretch":
            s = (s - s.mean()) / max(s.std(), 1e-9)
            M[:, p] = 0.2 + 0.78 / (1 + np.exp(-4.0 * s))
    return M

def abunds(seed, floor):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((P, 30, 30))
    for p in range(P):
        f[p] = gaussian_filter(f[p], 5.0, mode="nearest")
    f = f.reshape(P, 900) ** 2 + floor
    return f / f.sum(0, keepdims=True)

for style in ("lin", "bright", "stretch", "bstretch"):
    for floor in (0.0, 0.3):
        fc, kh, fr, nls = [], [], [], []
        for seed in range(2):
            Mv = spectra(style, seed + 10)
            M = EndmemberMatrix(Mv)
            Q, _ = np.linalg.qr(Mv)
            fr.append(min(np.linalg.norm((pr := Mv[:, i]*Mv[:, j]) - Q@(Q.T@pr))/np.linalg.norm(pr)
                          for i in range(2) for j in range(i+1, 3)))
            A = abunds(seed + 20, floor)
            from nlunmix.data_model import AbundanceMap
            Am = AbundanceMap(A)
            clean = mix(M, Am, "blmm", width=30, height=30)
            lin = Mv @ A
            nls.append(np.linalg.norm(clean.data - lin) / np.linalg.norm(lin))
            noisy, _ = add_noise(clean, 20.0, seed=seed + 30)
            fc.append(rmse(A, fcls(noisy, M).abundances.A))
            best = min(rmse(A, khype(noisy, M, mu, KernelConfig(2, 0.0)).abundances.A)
                       for mu in GRID)
            kh.append(best)
        print(f"{style:9s} floor={floor}: span-out {np.mean(fr):.2f} nl-share {np.mean(nls):.2f} "
              f"fcls {np.mean(fc):.4f} khype {np.mean(kh):.4f}  -> khype{'<' if np.mean(kh) < np.mean(fc) else '>'}fcls")
