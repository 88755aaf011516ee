"""Blind multiscale kernel-based nonlinear spectral unmixing."""

from .data_model import (
    AbundanceMap,
    EndmemberMatrix,
    NonlinearPart,
    SpectralImage,
    load_endmembers,
    load_image,
    pseudo_inverse,
    save_image,
)
from .dual_solver import (
    Bracket2D,
    DualSolution,
    QuadraticForm,
    bisect_1d,
    bisect_2d,
    g0_residual,
    g_fine_residuals,
    solve_inner_qp,
)
from .kernels import GramMatrix, KernelConfig, eval_nonlinear, gram_matrix, poly_kernel
from .metrics import EvalReport, evaluate, rmse, sam, sid
from .multiscale import (
    HomogeneityProfile,
    SuperpixelMap,
    coarsen,
    expand,
    homogeneity,
    select_num_superpixels,
    slic_segment,
)
from .simulation import SceneSpec, add_noise, gen_abundances, generate_scene, mix
from .statistics import (
    NoiseCovariance,
    ScaleConstants,
    compute_C0,
    compute_C1,
    compute_CE,
    compute_CY,
    estimate_noise_cov,
)
from .unmixers import (
    BmuaConfig,
    UnmixResult,
    bmua_coarse,
    bmua_fine,
    bmua_n,
    fcls,
    khype,
    khype_grid,
)

__version__ = "0.1.0"
