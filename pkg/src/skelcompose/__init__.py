"""Self-supervised multimodal skeleton action representation learning.

The library covers the full desk-scale pipeline: skeleton data handling
(parsing, synthesis, augmentation, derived modalities), a two-stream
transformer model with embedding fusion, the decompose/compose training
objectives with variance-covariance regularization, the pretraining loop,
and the downstream evaluation protocols (linear probe, KNN retrieval,
semi-supervised and transfer fine-tuning).
"""

__version__ = "0.1.0"

from .augment import AugmentationConfig, augment, resample_linear
from .dataset_io import read_dataset, write_dataset
from .errors import (
    FormatError,
    NumericalError,
    ParseError,
    SchemaError,
    SkelComposeError,
)
from .evaluation import (
    FeatureBank,
    extract_bank,
    finetune_classifier,
    knn_retrieve,
    linear_probe,
    read_bank,
    semi_supervised,
    transfer,
    write_bank,
)
from .losses import (
    LossBreakdown,
    LossConfig,
    composition_loss,
    covariance_term,
    decomposition_loss,
    mse_align,
    regularization_loss,
    total_loss,
    total_loss_grad,
    variance_term,
    vc_loss,
)
from .modalities import (
    MODALITIES,
    ModalityBundle,
    derive_bone,
    derive_motion,
    make_bundle,
    make_views,
)
from .model import Model, ModelConfig, ProjectedFeatures, RepresentationSet
from .ntu import parse_ntu_filename, parse_ntu_skeleton
from .pairs import sample_positive_pair
from .skeleton import (
    NTU25_TOPOLOGY,
    SkeletonDataset,
    SkeletonSequence,
    SkeletonTopology,
    center_root,
)
from .synthetic import synth_generate, synth_topology
from .training import (
    TrainConfig,
    load_checkpoint,
    lr_schedule,
    pretrain,
    save_checkpoint,
)
