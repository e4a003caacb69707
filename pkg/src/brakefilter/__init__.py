"""Learn a driver's braking behavior as a Gaussian-mixture hidden-mode model
and infer brake actions online from car-following observations."""

__version__ = "0.1.0"

from .core import (
    FEATURE_ORDER,
    AugmentedSample,
    ObservationVector,
    compute_features,
    flatten,
    unflatten,
)
from .errors import *  # noqa: F401,F403
from .evaluation import (
    ConfusionCounts,
    CvReport,
    MetricSet,
    confusion,
    cross_validate,
    metrics,
    threshold_sweep,
)
from .gmm import (
    FitReport,
    GaussianComponent,
    KMeansInit,
    MixtureModel,
    bic,
    fit_em,
    kmeans_init,
    log_density,
    responsibilities,
    select_components,
)
from .hmm import (
    BrakeHmm,
    FilterState,
    TrainConfig,
    assign_modes,
    decode,
    estimate_transfer,
    forward_init,
    forward_step,
    infer_brake,
    load_model,
    run_sequence,
    save_model,
    train_brake_hmm,
)
from .pipeline import (
    CarFollowingEvent,
    DriverDataset,
    RawTick,
    Rejection,
    SegmentationRules,
    build_dataset,
    load_trace,
    segment_events,
)
from .simgen import SimConfig, simulate, simulate_corpus
