"""Two-stage deep learning pipeline for 3D radio map super-resolution.

A coarse 3D U-Net predicts a low-resolution path-loss voxel grid from
building occupancy, transmitter location and line-of-sight tensors; a
super-resolution network lifts it to the fine grid guided by high-resolution
environment features. Ground truth comes from an analytic propagation
oracle, so every dataset, training run and metric is exactly reproducible.
"""

from .errors import (
    ConfigError,
    ContainerError,
    DatasetError,
    GridError,
    RadioSRError,
    ResolutionError,
    SceneError,
    ScenePlacementError,
    TrainingDiverged,
    UndefinedMetricError,
    ValidationError,
)
from .grids import (
    EnvironmentTensor,
    GridSpec,
    LosTensor,
    RadioMapTensor,
    TransmitterTensor,
    bresenham_los,
    colocated_centroids,
    denormalize_rm,
    downscale_occupancy,
    downscale_transmitter,
    normalize_rm,
)
from .container import read_container, write_container
from .oracle import (
    Box,
    EmpiricalPathLossParams,
    OraclePropagationParams,
    Scene,
    SceneGenConfig,
    empirical_path_loss,
    generate_radio_map,
    generate_scene,
    path_loss_at,
    rasterize_occupancy,
    scene_from_json,
    scene_to_json,
    segment_obstruction_length,
)
from .metrics import MetricReport, nmse, psnr, rmse, ssim3d
from .data import (
    Batch,
    BuildConfig,
    Manifest,
    Sample,
    SampleRecord,
    assign_splits,
    batch_indices,
    build_hybrid_dataset,
    load_batch,
    load_sample,
    split_dataset,
)
from .losses import (
    FeatureExtractor,
    IdentityFeatureExtractor,
    LossWeights,
    RandomFeatureExtractor,
    combined_loss,
    l1_loss,
    make_feature_extractor,
    mse_loss,
    perceptual_loss,
)
from .training import (
    PhaseSchedule,
    TrainState,
    end_to_end_val_loss,
    load_checkpoint,
    model_from_checkpoint,
    parameter_hash,
    save_checkpoint,
    seed_all,
    train_phase1,
    train_phase2,
    train_phase3,
)
from .experiments import (
    baseline_trilinear,
    complexity_report,
    end_to_end_nmse,
    evaluate_suite,
    format_complexity_table,
    render_slices,
    restrict_hr_subset,
    sweep_delta,
    sweep_m,
)

__version__ = "0.1.0"
