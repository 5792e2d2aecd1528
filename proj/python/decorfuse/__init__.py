"""Lidar-camera fusion detector: point decoration, sparse 3D convolution and
query-based fusion, with a synthetic desk-scale training harness."""

from ._core import (
    Box3D,
    Checkpoint,
    Config,
    DecorfuseError,
    Detection,
    LabeledBox,
    Scene,
    TrainResult,
    ap_40,
    bev_iou,
    decorate,
    evaluate,
    generate_scene,
    generate_scenes,
    gradcheck,
    heatmap,
    infer,
    infer_all,
    project,
    read_scene_dir,
    relabel_scene,
    rotated_iou_3d,
    train,
    write_scene_dir,
)

__all__ = [
    "Box3D",
    "Checkpoint",
    "Config",
    "DecorfuseError",
    "Detection",
    "LabeledBox",
    "Scene",
    "TrainResult",
    "ap_40",
    "bev_iou",
    "decorate",
    "evaluate",
    "generate_scene",
    "generate_scenes",
    "gradcheck",
    "heatmap",
    "infer",
    "infer_all",
    "project",
    "read_scene_dir",
    "relabel_scene",
    "rotated_iou_3d",
    "train",
    "write_scene_dir",
]
