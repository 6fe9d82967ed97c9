"""Local affine warping of multi-channel feature maps."""

from .frontalize import (DegenerateInputError, SimilarityTransform, apply_similarity, composite,
                         compose_similarity, gaussian_soft_mask, invert_similarity, solve_similarity)
from .gradients import (GradCheckReport, displacement_jacobian, finite_difference_check,
                        sampler_backward, warp_gradient)
from .grid import (CoarseGridConfig, compute_field_on_coarse_grid, make_identity_grid,
                   sample_bilinear, upscale_field, warp_feature_map)
from .warp import (BranchCutError, KeypointWarp, WarpSpec, algebra_from_params, displacement_at,
                   field_exp_reference, gaussian_influence, local_affine_target, matrix_exp_3x3,
                   softmax_weights)

__version__ = "0.1.0"

__all__ = [
    "BranchCutError", "CoarseGridConfig", "DegenerateInputError", "GradCheckReport", "KeypointWarp",
    "SimilarityTransform", "WarpSpec", "algebra_from_params", "apply_similarity", "compose_similarity",
    "composite", "compute_field_on_coarse_grid", "displacement_at", "displacement_jacobian",
    "field_exp_reference", "finite_difference_check", "gaussian_influence", "gaussian_soft_mask",
    "invert_similarity", "local_affine_target", "make_identity_grid", "matrix_exp_3x3",
    "sample_bilinear", "sampler_backward", "softmax_weights", "solve_similarity", "upscale_field",
    "warp_feature_map", "warp_gradient",
]
