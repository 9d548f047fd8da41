"""Image-to-image translation toolkit: paired (conditional GAN) and unpaired
(cycle-consistent) training on a self-contained autodiff core, with kNN
precision/recall and FID evaluation over pluggable embeddings."""

from .rng import RngStream
from .tensor import Graph, Node, ShapeMismatchError, Tensor, backward
from .ops import (
    DegenerateVarianceError,
    RunningStats,
    batchnorm2d,
    concat_channels,
    conv2d,
    conv_transpose2d,
    dropout,
)
from .optim import AdamState, adam_step
from .models import (
    LayerSpec,
    ModelSpec,
    Network,
    build_patchgan,
    build_unet_generator,
    forward,
    parameter_count,
    patchgan_spec,
    receptive_field,
    unet_spec,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .losses import (
    CycleLossRecord,
    LossRecord,
    LossVariant,
    cycle_loss,
    gan_loss_discriminator,
    gan_loss_generator,
    paired_objective,
    recon_loss,
    unpaired_objective,
)
from .data import (
    AugmentConfig,
    DatasetError,
    ImageSet,
    batch_iterator,
    load_dataset,
    make_synthetic,
    normalize,
    paired_batch_iterator,
    random_flip,
    random_jitter,
)
from .training import ConfigError, NumericDivergenceError, TrainConfig, TrainState, train
from .metrics import (
    FeatureSet,
    GaussianStats,
    RandomProjectionEmbedder,
    evaluate,
    fid,
    gaussian_stats,
    knn_radius,
    matrix_sqrt_psd,
    membership,
    precision_recall,
)

__version__ = "0.1.0"
