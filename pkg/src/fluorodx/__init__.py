"""fluorodx: rabies fluorescence-microscopy image classification toolkit."""

from .augment import AugmentationSpec, AugStrategy, expand_training_set
from .estimator import TransferClassifier
from .evaluation import (
    CVResult,
    ExperimentConfig,
    MetricReport,
    compute_metrics,
    final_retrain,
    run_cross_validation,
    select_best,
    stratified_kfold,
)
from .gradcam import GradCamMap, grad_cam, overlay
from .manifest import (
    ClassWeights,
    DatasetManifest,
    ImageRecord,
    Label,
    Origin,
    Split,
    SplitRatios,
    Variant,
    class_distribution,
    compute_class_weights,
    load_manifest,
    save_manifest,
    stratified_split,
)
from .models import ArchitectureId, ClassifierModel, build_model, load_checkpoint, preprocess, save_checkpoint
from .roi import BoundingBox, PixelRect, build_sdp_dataset, parse_annotations, to_pixel_rect
from .training import TrainConfig, TrainingHistory, train, weighted_cross_entropy

__version__ = "0.1.0"
