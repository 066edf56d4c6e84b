"""Co-trained dual-branch unrolled reconstruction for multi-coil MRI.

Physics operators, Cartesian mask generation with contrastive branch
splits, a CG-unrolled reconstruction network, the three-part co-training
objective, a phantom simulator for desk-scale verification, and evaluation
tooling, all tied together by the ``comri`` command-line interface.
"""

from .cotrain import (
    REGIMES,
    CoTrainedModel,
    CoTrainingLossReport,
    Expander,
    TrainConfig,
    TrainResult,
    build_model,
    co_training_loss,
    load_checkpoint,
    loss_cl,
    loss_rc,
    loss_uc,
    model_from_checkpoint,
    mse_complex,
    reconstruct,
    save_checkpoint,
    train,
)
from .data import (
    DatasetManifest,
    SlicePool,
    VolumeRecord,
    build_slice_pool,
    coil_profiles,
    load_manifest,
    load_sensitivities,
    load_volume,
    normalize_volume,
    save_manifest,
    save_volume,
    simulate_phantom_dataset,
    split_dataset,
)
from .errors import (
    ComriError,
    ContractError,
    DataFormatError,
    InvalidConfigError,
    InvalidInputError,
    TrainingDivergedError,
)
from .evaluate import (
    MetricsRecord,
    evaluate_pool,
    reconstruct_cg_sense,
    reconstruct_zero_filled,
    reference_magnitude,
    summarize,
)
from .masks import (
    KIND_1D,
    KIND_2D,
    MaskSplit,
    SamplingMask,
    apply_mask,
    effective_acceleration,
    epoch_split_seed,
    load_mask,
    make_1d_random_mask,
    make_2d_random_mask,
    save_mask,
    split_mask,
)
from .metrics import psnr, ssim
from .operators import (
    CoilSensitivities,
    SenseOperator,
    dc_projection,
    estimate_sensitivities,
    fft2c,
    ifft2c,
    rss_combine,
)
from .unrolled import (
    ConvDenoiser,
    UnrolledConfig,
    UnrolledNet,
    cg_solve,
    pack_complex,
    unpack_complex,
)

__version__ = "0.1.0"
