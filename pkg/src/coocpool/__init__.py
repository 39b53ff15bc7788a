"""Co-occurrence pooling of convolutional activation tensors for image retrieval."""

__version__ = "0.1.0"

from .cooccurrence import (
    CoocFilter,
    channel_cooc_vector,
    cooc_bruteforce,
    cooc_conv,
    cooc_correlation_matrix,
    full_offset_grid,
    load_filter,
    make_filter,
    save_filter,
    shih_cooc_tensor,
    shih_correlation,
)
from .errors import (
    CoocError,
    DegenerateDescriptorWarning,
    DimensionError,
    DomainError,
    FileCorruptionError,
    FileFormatError,
    GroundTruthError,
    TrainingError,
    ValidationError,
)
from .evaluation import QueryGroundTruth, average_precision, load_groundtruth, mean_ap
from .pooling import (
    SketchParams,
    bilinear_pool,
    channel_cooc_weights,
    compact_bilinear_pool,
    linear_weighted_pool,
    make_sketch_params,
    masked_tensor,
    spatial_cooc_weights,
    spatial_mask_center,
    spatial_mask_topdown,
    sum_pool,
)
from .retrieval import (
    DescriptorIndex,
    alpha_qe,
    average_qe,
    build_index,
    load_index,
    query,
    save_index,
)
from .tensors import (
    apply_mask,
    l2norm,
    load_tensor,
    mean_activation,
    save_tensor,
    threshold_mask,
)
from .training import (
    AdamState,
    PairSample,
    TrainConfig,
    TrainResult,
    adam_step,
    contrastive_loss,
    forward_descriptor,
    grad_filter,
    load_pair_list,
    train,
)
from .whitening import (
    WhiteningModel,
    apply_whitening,
    fit_whitening,
    load_whitening,
    multiscale_aggregate,
    save_whitening,
)
