"""trackprobe: correlation-map point tracking over dense feature videos.

Zero-shot argmax tracking, low-capacity probe heads, and LoRA adaptation
of a compact ViT, with TAP-Vid style metrics, bit-exact file formats,
and a synthetic oracle benchmark that makes the whole pipeline
verifiable end to end.
"""

from .errors import (
    CheckpointMismatchError,
    CorruptFileError,
    InvalidConfigError,
    InvalidInputError,
    InvalidStateError,
    TrackProbeError,
    TrainingFaultError,
    UndefinedMetricError,
)
from .grids import Grid2D, Point2D, argmax2d, bilinear_sample, resize_bilinear, soft_argmax2d, softmax2d
from .metrics import (
    DELTA_THRESHOLDS,
    EVAL_RESOLUTION,
    EvalTrack,
    MetricsReport,
    average_jaccard,
    delta_avg,
    evaluate_queried_first,
    occlusion_accuracy,
)
from .probe import ProbeOutput, ProbeParams, ProbeSample, bce_loss, huber_loss, probe_forward, probe_init, probe_loss_and_grad, probe_track
from .synthetic import ImageSyntheticConfig, SyntheticConfig, synth_generate, synth_image_videos
from .tracking import FeatureVideo, Query, Trajectory, correlation_map, correlation_volume, extract_query_feature, zero_shot_track
from .vit import (
    LoRAAdapter,
    LoRAViTParams,
    ViTConfig,
    adapt_forward_track,
    adapter_param_count,
    init_lora_vit,
    lora_merge,
    merged_base,
    unmerged_base,
    vit_backward,
    vit_forward,
)

__version__ = "0.1.0"
