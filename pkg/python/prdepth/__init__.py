from prdepth._config import RunConfig, load_run_config, parse_config_text
from prdepth._data import (
    Scene,
    SceneParams,
    SceneSample,
    list_scenes,
    load_scene,
    sample_sparse,
    synth_scene,
    write_scene,
    write_synthetic_dataset,
)
from prdepth._diffcore import (
    GradientComparison,
    Tape,
    Tensor,
    backward,
    conv2d,
    deconv2d,
    gradient_check,
    parameter,
)
from prdepth._errors import (
    ConfigError,
    FormatError,
    InvalidArgumentError,
    NonFiniteError,
    PRDepthError,
)
from prdepth._io import (
    load_checkpoint,
    read_pfm,
    read_pgm,
    read_plane_set,
    read_ppm,
    read_pr_map,
    read_volume,
    save_checkpoint,
    write_pfm,
    write_pgm,
    write_plane_set,
    write_ppm,
    write_pr_map,
    write_volume,
)
from prdepth._losses import LossReport, depth_loss, plane_ce_loss, residual_loss, total_loss
from prdepth._metrics import MetricsReport, evaluate
from prdepth._network import (
    ForwardOutputs,
    InferenceResult,
    ResidualSupervision,
    ToyPRNet,
    ToyPRNetConfig,
    TrainOptions,
    TrainResult,
    infer,
    network_input,
    parameter_count,
    residual_supervision,
    soft_residual_target,
    train,
)
from prdepth._planes import (
    DepthPlaneSet,
    PlaneStrategy,
    PRMap,
    d_step,
    decode,
    encode,
    make_planes,
    sparse_to_network_input,
)
from prdepth._volume import (
    argmax_plane,
    classification_depth,
    confidence,
    guided_filter,
    reconstruct_depth,
    softmax_volume,
)

__all__ = [
    "ConfigError",
    "DepthPlaneSet",
    "ForwardOutputs",
    "FormatError",
    "GradientComparison",
    "InferenceResult",
    "InvalidArgumentError",
    "LossReport",
    "MetricsReport",
    "NonFiniteError",
    "PRDepthError",
    "PRMap",
    "PlaneStrategy",
    "ResidualSupervision",
    "RunConfig",
    "Scene",
    "SceneParams",
    "SceneSample",
    "Tape",
    "Tensor",
    "ToyPRNet",
    "ToyPRNetConfig",
    "TrainOptions",
    "TrainResult",
    "argmax_plane",
    "backward",
    "classification_depth",
    "confidence",
    "conv2d",
    "d_step",
    "decode",
    "deconv2d",
    "depth_loss",
    "encode",
    "evaluate",
    "gradient_check",
    "guided_filter",
    "infer",
    "list_scenes",
    "load_checkpoint",
    "load_run_config",
    "load_scene",
    "make_planes",
    "network_input",
    "parameter",
    "parameter_count",
    "parse_config_text",
    "plane_ce_loss",
    "read_pfm",
    "read_pgm",
    "read_plane_set",
    "read_ppm",
    "read_pr_map",
    "read_volume",
    "reconstruct_depth",
    "residual_loss",
    "residual_supervision",
    "sample_sparse",
    "save_checkpoint",
    "soft_residual_target",
    "softmax_volume",
    "sparse_to_network_input",
    "synth_scene",
    "total_loss",
    "train",
    "write_pfm",
    "write_pgm",
    "write_plane_set",
    "write_ppm",
    "write_pr_map",
    "write_scene",
    "write_synthetic_dataset",
    "write_volume",
]
