"""soundtriage: priority-conditioned polyphonic sound event detection.

Train a single detector once; at inference, hand it any per-class priority
vector to trade detection performance toward the classes you care about,
without retraining.
"""

__version__ = "0.1.0"

from .backbone import BackboneConfig, DetectorBackbone, PosteriorGrid
from .conditioning import FilmParams, TriageConditioner, apply_film, identity_film
from .dataio import (ClipAnnotation, EventRoll, FeatureConfig, FeatureGrid,
                     PreparedClip, extract_logmel, pool_labels, prepare_clips,
                     rasterize, read_dataset, repeat_upsample, synthesize_dataset,
                     write_dataset)
from .estimator import TriageDetector
from .inference import (PostprocessConfig, TuneResult, binarize, events_from_probs,
                        extract_events, median_smooth, predict, tune_postprocessing)
from .losses import LossValue, batch_loss, compute_loss, loss_sed, loss_set_a, loss_set_ai
from .metrics import (EventInstance, IntersectionConfig, MetricsReport, build_report,
                      frame_f1, insertion_deletion, intersection_f1)
from .training import (Checkpoint, CheckpointError, TrainConfig,
                       TrainingDivergedError, load_checkpoint, save_checkpoint, train)
from .triage import (DirichletConfig, TriageWeights, make_inference_weights,
                     sample_triage, scale_for_conditioning)

__all__ = [
    "BackboneConfig", "DetectorBackbone", "PosteriorGrid",
    "FilmParams", "TriageConditioner", "apply_film", "identity_film",
    "ClipAnnotation", "EventRoll", "FeatureConfig", "FeatureGrid", "PreparedClip",
    "extract_logmel", "pool_labels", "prepare_clips", "rasterize", "read_dataset",
    "repeat_upsample", "synthesize_dataset", "write_dataset",
    "TriageDetector",
    "PostprocessConfig", "TuneResult", "binarize", "events_from_probs",
    "extract_events", "median_smooth", "predict", "tune_postprocessing",
    "LossValue", "batch_loss", "compute_loss", "loss_sed", "loss_set_a", "loss_set_ai",
    "EventInstance", "IntersectionConfig", "MetricsReport", "build_report",
    "frame_f1", "insertion_deletion", "intersection_f1",
    "Checkpoint", "CheckpointError", "TrainConfig", "TrainingDivergedError",
    "load_checkpoint", "save_checkpoint", "train",
    "DirichletConfig", "TriageWeights", "make_inference_weights", "sample_triage",
    "scale_for_conditioning",
    "__version__",
]
