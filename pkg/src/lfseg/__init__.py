"""View-consistent light field segmentation.

Segments a 4-D light field by decoding masks in the middle subview,
projecting them into every view along their disparity, filtering occluded
pixels by patch-feature similarity, and re-prompting a promptable 2-D
segmentation backend per view with a centroid-and-box prompt (falling
back to the projected mask when the refinement disagrees). Ships with an
exact synthetic-scene generator, a ground-truth oracle backend, a wire
protocol for external model servers, and a cross-view metrics suite.
"""

from .core import (
    DisparityMap,
    GroundTruth,
    LfsegError,
    LightField,
    LightFieldMask,
    Stage,
    ViewIndex,
    ViewMask,
    backproject_point,
    mask_iou,
    middle_view,
    project_point,
    round_half_away,
    snake_order,
)
from .backend import (
    ExternalBackend,
    FeatureMap,
    OracleBackend,
    Prompt,
    SegmenterBackend,
    SegmentResult,
    StubBackend,
    Transport,
)
from .disparity import DisparityParams, EpiSlice, epi_orientation, estimate_disparity
from .io import LayoutConfig, load_lightfield, load_masks, save_lightfield, save_masks
from .metrics import MetricsReport, backproject_mask, evaluate
from .pipeline import (
    MaskFeature,
    PipelineConfig,
    TimingRecord,
    WeightedMask,
    build_prompt,
    densify_features,
    features_at,
    mask_mean_feature,
    occlude_mask,
    propagate_mask,
    refine_and_select,
    segment_lightfield,
    segment_source,
)
from .synthgen import (
    BackgroundSpec,
    ObjectSpec,
    SceneSpec,
    SyntheticScene,
    downsample_features,
    generate,
    make_random_scene,
    save_scene,
)

__version__ = "0.1.0"
