"""Well-labeled trees, their quadrangulations, and profile estimates for the infinite limit."""

from .trees import (
    ContourPair,
    LabeledTree,
    PlaneTree,
    SpineDecomposition,
    TruncationCertificate,
    decode_contour,
    dumps_tree,
    encode_contour,
    loads_tree,
    spine_assemble,
    spine_decompose,
    spine_project,
    tree_distance,
    truncate_at_height,
    validate,
)
from .sampling import (
    HARMONIC_QUARTIC,
    NOMINAL_QUARTIC,
    KernelRow,
    RngStream,
    TruncationPolicy,
    enumerate_well_labeled,
    kernel_row,
    prob_hat_min_le,
    prob_min_at,
    prob_min_le,
    prob_min_positive,
    sample_rho,
    sample_rho_hat,
    sample_spine,
    sample_uiwt,
)
from .schaeffer import (
    PartialMap,
    PlanarMap,
    Quadrangulation,
    ball_map,
    build_finite,
    build_truncated,
    canonical_encoding,
    corner_sequence,
    graph_distances,
    local_distance,
)
from .limits import (
    TARGETS,
    EstimateReport,
    ProfileMeasure,
    RescaledProfile,
    TargetCurve,
    expected_profile,
    mc_ball_volume,
    mc_mean_profile,
    profile_from_decomposition,
    rescale,
    spine_moment_check,
)

__version__ = "0.1.0"
