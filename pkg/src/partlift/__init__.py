"""partlift: lift multi-view 2D instance masks of an object into 3D
semantic and instance part segmentation of its point cloud.

The pipeline renders the cloud from a camera rig, oversegments it into
superpoints, votes per-superpoint semantics from mask coverage, groups
superpoints into initial 3D instances, refines them by alternating
mask-to-instance matching with gradient descent on instance logits, and
finally splits spatially disconnected instances.
"""

__version__ = "0.1.0"

from .geometry import (
    CameraView,
    PointCloud,
    ViewRender,
    generate_camera_rig,
    load_rig,
    project_point,
    project_points,
    render_visibility,
    save_rig,
)
from .ply import load_ply, save_ply
from .superpoints import (
    SuperpointPartition,
    identity_partition,
    load_partition,
    oversegment,
    save_partition,
)
from .masks import InstanceMask2D, MaskSet, corrupt, load_masks, rasterize_ground_truth, save_masks
from .voting import SemanticScores, UNASSIGNED, vote
from .grouping import (
    Instance,
    InstanceSegmentation,
    group,
    load_instances,
    overlap,
    save_instances,
)
from .em import (
    EMConfig,
    LogitMatrix,
    bce_cost,
    e_step,
    init_logits,
    m_step,
    project_scores,
    run_em,
    solve_assignment,
    split_disconnected,
)
from .metrics import EvalReport, evaluate, map50, miou
from .scenes import PartSpec, SceneSpec, generate, make_benchmark
from .pipeline import PipelineConfig, SegmentationResult, ablation_run, segment_scene
from .errors import PipelineError, StageError
