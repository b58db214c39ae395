"""Desk-scale laboratory for nested U-Net point-cloud segmentation codecs.

Modules:
    tensor       dense tensors with tape-based reverse-mode autodiff
    pointops     sampling hierarchies, KNN, up/down index maps
    blocks       coding blocks, embedding, classification heads
    graph        topology construction/validation/export (DOT, JSON)
    model        executable model: graph plus parameters
    supervision  deep-supervision selection and the hybrid loss
    metrics      confusion-matrix metrics and parameter/MAC analysis
    scene        synthetic labeled scene generation
    dataio       point-cloud file formats and experiment configs
    train        Adam, the training loop, checkpoints, evaluation
    ablate       topology/supervision sweeps
    cli          command-line interface
"""

from .blocks import EVAL, GRAD_CHECK, TRAIN, BlockKind, CodingBlockSpec, DimSchedule
from .dataio import TrainConfig, load_cloud, parse_train_config, save_cloud_ascii
from .graph import (
    EdgeTransform,
    GraphSpec,
    NodeId,
    TopologyKind,
    build_topology,
    enumerate_connectivity,
    to_dot,
    to_json,
    validate_graph,
)
from .metrics import ConfusionMatrix, analyze, iou_per_class, macc, miou, oa
from .model import Model
from .pointops import (
    KnnTable,
    PointCloud,
    SamplingHierarchy,
    build_hierarchy,
    downsample_gather,
    knn,
    propagate_labels,
    random_subsample,
    upsample_nearest,
)
from .scene import CLASS_NAMES, SceneSpec, generate_scene
from .supervision import (
    LossReport,
    SupervisionMode,
    loss_ds,
    loss_hybrid,
    node_loss,
    select_supervised_nodes,
)
from .tensor import Tape, Tensor, backward, grad_check, use_dtype
from .training import AdamState, adam_step, build_model, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BlockKind",
    "CLASS_NAMES",
    "CodingBlockSpec",
    "ConfusionMatrix",
    "DimSchedule",
    "EVAL",
    "EdgeTransform",
    "GRAD_CHECK",
    "GraphSpec",
    "KnnTable",
    "LossReport",
    "Model",
    "NodeId",
    "PointCloud",
    "SamplingHierarchy",
    "SceneSpec",
    "SupervisionMode",
    "TRAIN",
    "Tape",
    "Tensor",
    "TopologyKind",
    "TrainConfig",
    "adam_step",
    "analyze",
    "backward",
    "build_hierarchy",
    "build_model",
    "build_topology",
    "downsample_gather",
    "enumerate_connectivity",
    "evaluate",
    "generate_scene",
    "grad_check",
    "iou_per_class",
    "knn",
    "load_cloud",
    "loss_ds",
    "loss_hybrid",
    "macc",
    "miou",
    "node_loss",
    "oa",
    "parse_train_config",
    "propagate_labels",
    "random_subsample",
    "save_cloud_ascii",
    "select_supervised_nodes",
    "to_dot",
    "to_json",
    "train",
    "upsample_nearest",
    "use_dtype",
    "validate_graph",
]
