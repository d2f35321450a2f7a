"""Kinetic consensus models and their use for image segmentation."""

from .core import DiffusionLaw, ModelParams, ParticleEnsemble, diffusion_coeff, interaction_kernel, make_rng
from .density import DensityGrid, GridSpec, empirical_histogram, l1_distance, marginal, mollified_density, moment
from .dsmc import binary_interaction, dsmc_step, quasi_invariant_params, run_dsmc, sample_pairs, sround
from .fpref import Fp1dState, drift_operator, fp_solve, fp_step
from .microdyn import Hk1dState, count_clusters, simulate_hk_1d, step_hk_1d, step_sde
from .segpipe import GrayImage, SegOptions, load_image, segment_image, segment_patched
from .tune import SearchSpace, TrialLog, dsc_loss, dsc_metric, random_search, sample_params

__version__ = "0.1.0"

__all__ = [
    "DiffusionLaw", "ModelParams", "ParticleEnsemble", "diffusion_coeff", "interaction_kernel", "make_rng",
    "DensityGrid", "GridSpec", "empirical_histogram", "l1_distance", "marginal", "mollified_density", "moment",
    "binary_interaction", "dsmc_step", "quasi_invariant_params", "run_dsmc", "sample_pairs", "sround",
    "Fp1dState", "drift_operator", "fp_solve", "fp_step",
    "Hk1dState", "count_clusters", "simulate_hk_1d", "step_hk_1d", "step_sde",
    "GrayImage", "SegOptions", "load_image", "segment_image", "segment_patched",
    "SearchSpace", "TrialLog", "dsc_loss", "dsc_metric", "random_search", "sample_params",
]
