"""Multi-view multi-task mispronunciation detection and diagnosis.

The package trains a small fusion network on precomputed encoder features:
two feature streams per utterance are pooled, stacked and convolved into a
frame embedding that feeds a CTC phoneme recogniser plus four auxiliary
articulatory-feature CTC heads. Scoring follows the hierarchical
detection/diagnosis scheme over canonical / perceived / predicted triples.
"""

from .af_inventory import (
    AF_FB,
    AF_HL,
    AF_M,
    AF_P,
    AF_STREAMS,
    PHONES,
    AfTable,
    AfTableError,
    PhoneInventory,
    load_af_table,
    map_phones,
    map_sequence,
)
from .corpusio import (
    FeatureFormatError,
    ManifestError,
    SynthConfig,
    UtteranceRecord,
    generate,
    load_checkpoint,
    load_manifest,
    read_features,
    save_checkpoint,
    write_features,
    write_manifest,
)
from .ctc import (
    CtcError,
    CtcResult,
    InfeasibleTargetError,
    ctc_brute_force,
    ctc_loss,
    greedy_decode,
    min_frames,
)
from .evalmetrics import (
    MddCounts,
    MddMetrics,
    align,
    corpus_per,
    mdd_counts,
    metrics,
    per,
    score_corpus,
)
from .netops import ModelParams, NetConfig, downsample, forward, prepare_input
from .trainer import (
    AllAtOnce,
    FitResult,
    Sequential,
    TrainConfig,
    TrainingDivergedError,
    active_tasks,
    evaluate_model,
    fit,
    prepare_dataset,
    train_step,
)

__version__ = "0.1.0"
