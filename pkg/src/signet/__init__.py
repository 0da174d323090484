"""signet: writer-independent offline signature verification.

A convolutional Siamese network trained with a contrastive objective on
balanced genuine/forged signature pairs, evaluated by threshold sweep
(balanced accuracy, FAR, FRR). Ships with a deterministic synthetic corpus
generator for desk-scale end-to-end runs.
"""

from ._kernels import BACKEND as kernel_backend
from .tensor import Tape, Tensor, backward, set_default_dtype, tensor_from, use_dtype
from .model import (
    ArchitectureConfig,
    LayerSpec,
    Model,
    activation_maps,
    build_signet,
    embed,
    full_architecture,
    pair_distance,
    tiny_architecture,
)
from .training import (
    ContrastiveLossParams,
    RmspropState,
    TrainConfig,
    contrastive_loss,
    rmsprop_step,
    train,
)
from .data import (
    DatasetIndex,
    PairSample,
    SplitSpec,
    build_protocol,
    dataset_std,
    generate_pairs,
    load_dataset,
    preprocess,
    split_writers,
)
from .synth import CorpusSpec, gen_corpus, gen_writer, render_sample
from .evaluation import (
    DistanceRecord,
    EvalReport,
    compute_distances,
    cross_dataset_matrix,
    far_frr,
    threshold_sweep,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
