"""Zero-shot classification of precomputed feature vectors with a
skewness-based anti-hubness training loss.

The package trains a small MLP that projects class semantic vectors into
the feature space, scores instances by cosine against the projected
class prototypes, and augments the usual alignment objective with a
batch-level skewness penalty that discourages a few classes from
soaking up most predictions.
"""

from .calibration import CvReport, CvSpec, mc_cross_validate
from .dataio import (
    EmbeddingTable,
    FeatureBank,
    SplitManifest,
    SynthSpec,
    generate_synthetic,
    load_embedding_table,
    load_feature_bank,
    load_split_manifest,
    save_embedding_table,
    save_feature_bank,
    save_split_manifest,
)
from .hubness import HubnessReport, OccurrenceDistribution, hubness_report, occurrence_distribution
from .inference import (
    EvalReport,
    GzslScores,
    evaluate_gzsl,
    evaluate_zsl,
    gzsl_predict,
    harmonic_mean,
    zsl_predict,
)
from .kernels import cosine, l2_distance_sq, skewness_of_counts, softmax
from .losses import (
    BatchHistogram,
    TrainConfig,
    distance_loss,
    predict_batch_hard,
    skewness_loss,
    soft_histogram,
    total_loss,
)
from .projector import AdamState, MlpWeights, adam_step, backward, forward, init_weights
from .trainer import TrainRun, load_run, save_run, train

__version__ = "0.1.0"
