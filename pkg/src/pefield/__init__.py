"""Hierarchical depth-aware rotary positional-encoding fields for a toy DiT.

Novel views are synthesized by warping token positional coordinates instead
of pixels: source-view tokens keep their content but receive the projected
(x, y, depth) positions they would occupy in the target camera, per attention
head and resolution level, while noise tokens on the regular target grid are
denoised into the output image.
"""

from .flow import (
    Condition,
    FlowBatch,
    OptimizerSettings,
    PreparedPair,
    euler_sample,
    flow_loss,
    interpolate,
    make_flow_batch,
    prepare_condition,
    prepare_pair,
    sample_t,
    train_loop,
)
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    PEField,
    build_pe_field,
    interpolate_pose,
    noise_grid_pe,
    project,
    read_pe_field,
    transform_point,
    unproject,
    write_pe_field,
)
from .harness import (
    EvalReport,
    edit_demo,
    evaluate_model,
    multi_step_nvs,
    nvs,
    run_ablation,
    shuffle_demo,
    split_pairs,
    variant_config,
)
from .headmap import HeadLevelMap, level_for_head, num_levels, subcell_for_head
from .metrics import psnr, ssim
from .model import (
    DiT,
    DiTConfig,
    TokenSequence,
    load_checkpoint,
    param_count,
    patchify,
    rope_tables,
    save_checkpoint,
    unpatchify,
)
from .rope import RopeAxisSplit, apply_rope3d, axis_split, pair_angles, rope_rotate
from .scenes import (
    Dataset,
    Scene,
    SceneFrame,
    dataset_read,
    dataset_write,
    generate_scene,
    make_pair,
    render,
    render_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
