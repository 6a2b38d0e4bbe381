"""voxseg: part segmentation of sparse voxel shapes by generative colorization.

A multi-task conditional flow-matching model predicts part-indicative voxel
colors for three tasks sharing one checkpoint: interactive click prompting
(target part white, rest black), unconditioned full segmentation (one distinct
color per part), and full segmentation guided by a rendered 2D color map.
"""

from .codec import (
    CodecParams,
    CodecTrainConfig,
    LatentGrid,
    decode,
    encode,
    identity_codec,
    load_codec,
    save_codec,
    train_codec,
)
from .decode import (
    MatchResult,
    decode_full,
    decode_guided,
    decode_interactive,
    format_iou_table,
    iou,
    iou_at_n_report,
    match_parts,
    simulate_clicks,
)
from .flow import (
    LossConfig,
    cfm_loss,
    cfm_loss_tensor,
    euler_sample,
    interpolate,
    noise_like,
    sample_noise,
    velocity_target,
)
from .grids import (
    Palette,
    PartLabeling,
    SparseVoxelGrid,
    new_grid,
    read_grid,
    sample_palette,
    sample_palette_adaptive,
    write_grid,
)
from .model import (
    TASK_FULL,
    TASK_GUIDED,
    TASK_INTERACTIVE,
    ModelConfig,
    PointPrompt,
    PointTokens,
    TaskCondition,
    VelocityTransformer,
    fuse_modulation,
    predict_velocity,
    sinusoidal_encoding,
)
from .shapes import (
    DatasetConfig,
    DatasetEntry,
    GuidanceMap,
    Primitive,
    ShapeSpec,
    generate_shape,
    load_dataset,
    make_full_target,
    make_interactive_target,
    read_guidance,
    render_guidance,
    sample_dataset,
    save_dataset,
    shape_palette,
    write_guidance,
)
from .training import (
    ModelBundle,
    TrainConfig,
    evaluate,
    load_bundle,
    run_segmentation,
    save_bundle,
    train,
)

__version__ = "0.1.0"
