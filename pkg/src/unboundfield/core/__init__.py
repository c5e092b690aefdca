from .geometry import (
    CONTRACT,
    IDENTITY,
    GaussianSegment,
    Ray,
    conical_frustum_to_gaussian,
    contract,
    contract_jacobian,
    contract_jvp,
    s_to_t,
    t_to_s,
    warp_gaussian,
)
from .camera import (
    Intrinsics,
    PoseSet,
    generate_ray,
    generate_rays,
    image_rays,
    look_at,
    normalize_poses,
    pose_normalization,
    read_poses,
    write_poses,
)
from .encoding import (
    EncodingBasis,
    axis_aligned_basis,
    dir_features,
    feature_width,
    ipe_features,
    off_axis_basis,
)
from .histograms import (
    WeightHistogram,
    anneal_weights,
    bound,
    composite,
    dilate,
    dilation_epsilon,
    distortion_loss,
    median_depth,
    proposal_loss,
    resample,
    schlick_bias,
    weights_from_density,
)

__all__ = [
    "CONTRACT",
    "IDENTITY",
    "GaussianSegment",
    "Ray",
    "conical_frustum_to_gaussian",
    "contract",
    "contract_jacobian",
    "contract_jvp",
    "s_to_t",
    "t_to_s",
    "warp_gaussian",
    "Intrinsics",
    "PoseSet",
    "generate_ray",
    "generate_rays",
    "image_rays",
    "look_at",
    "normalize_poses",
    "pose_normalization",
    "read_poses",
    "write_poses",
    "EncodingBasis",
    "axis_aligned_basis",
    "dir_features",
    "feature_width",
    "ipe_features",
    "off_axis_basis",
    "WeightHistogram",
    "anneal_weights",
    "bound",
    "composite",
    "dilate",
    "dilation_epsilon",
    "distortion_loss",
    "median_depth",
    "proposal_loss",
    "resample",
    "schlick_bias",
    "weights_from_density",
]
