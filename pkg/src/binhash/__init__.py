"""Learning binary hash codes from pairwise similarity, and searching with them.

The package trains a small feedforward encoder whose final activation is a
progressively sharpened tanh, so the learned codes end up exactly binary; the
pairwise loss reweights similar/dissimilar pairs to survive heavy class
imbalance. Retrieval runs as an exact bit-packed Hamming scan with the usual
ranking metrics on top.
"""

from .codes import (
    BinaryCode,
    binarize,
    hamming_distance,
    inner_product,
    pack_values,
    read_code_file,
    scaled_tanh,
    sign_values,
    write_code_file,
)
from .continuation import (
    ContinuationSchedule,
    OptimizerConfig,
    TrainLog,
    TrainRecord,
    default_schedule,
    train,
    train_ablation,
)
from .encoder import (
    EncoderConfig,
    EncoderParams,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    zero_velocities,
)
from .errors import (
    DegenerateDatasetError,
    NumericFailureError,
    StaleTraceError,
    UndefinedRecallError,
)
from .evaluation import (
    MetricReport,
    average_precision,
    code_histogram,
    evaluate,
    mean_average_precision,
    precision_at_hamming2,
    precision_at_n,
    precision_recall_curve,
    shared_label_judge,
)
from .loss import LossConfig, LossReport, adaptive_sigmoid, batch_loss, pair_grad, pair_loss
from .pairdata import (
    Dataset,
    LabeledPoint,
    PairExample,
    SimilarityStats,
    continuous_similarity,
    estimate_stats,
    generate_imbalanced,
    generate_synthetic,
    pair_weight,
    read_feature_file,
    read_points_csv,
    sample_pair_batch,
    similarity_from_labels,
    split,
    write_feature_file,
)
from .retrieval import CodeIndex, RankedResult, encode_dataset, lsh_encode, radius_query, rank

__version__ = "0.1.0"
