"""allogrid: world-fixed vs ego-fixed dynamic occupancy grid prediction.

Desk-scale pipeline around a single comparison: filtering lidar scans into
four-state occupancy grids in a fixed world frame keeps static structure
still, so even simple predictors forecast the scene far better than in the
conventional vehicle-fixed frame.
"""

__version__ = "0.1.0"

from .geometry import OrientedRect, Pose2D, normalize_angle, unicycle_advance
from .scene import (
    Agent,
    Scenario,
    SensorFrame,
    cast_rays,
    read_sensor_log,
    run_scenario,
    scene_rects,
    step_scenario,
    write_sensor_log,
)
from .presets import MIX, PRESETS, make_scenario
from .grid import (
    CellState,
    OccGrid,
    init_grid,
    normalize_cells,
    read_snapshot,
    resample_grid,
    write_snapshot,
)
from .filtering import (
    FilterParams,
    FilterPipeline,
    classify_motion,
    predict_step,
    update_from_scan,
)
from .frames import (
    FramePlan,
    PairedRun,
    fuse_ego_to_allo,
    plan_allo_frame,
    run_allo_pipeline,
    run_ego_pipeline,
    run_paired_scenario,
)
from .gridimage import GridImage, decode, encode, read_png, resize, write_png
from .sequences import (
    GenerationConfig,
    GridSequence,
    VisibilityMask,
    apply_mask,
    build_pair_record,
    build_sequences,
    generate_dataset,
    read_dataset,
    read_sequence,
    visibility_mask,
)
from .predictors import (
    AdvectParams,
    Prediction,
    predict_advect,
    predict_ego_warp,
    predict_persistence,
    predict_sequence,
    run_external,
)
from .evaluate import (
    EvalReport,
    LossWeights,
    channel_mse,
    evaluate_prediction,
    horizon_curves,
    render_comparison_strip,
    ssim,
    weighted_loss,
)
