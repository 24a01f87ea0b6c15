from .augment import (AppliedTransform, AugmentationParams, apply_transform, augment,
                      transform_label_grid)
from .classes import CLASS_IDS, CLASS_NAMES, NUM_CLASSES, REPORT_ORDER, ClassMap, load_class_map
from .formats import (DenseLabelGrid, PointCloud, decode_scan, linear_index, read_label_grid,
                      read_scan, write_label_grid, write_scan)
from .synthetic import (Box, Plane, Pole, SceneSpec, generate_synthetic_scene, random_scene_spec,
                        rasterize, simulate_scan)

__all__ = [
    "AppliedTransform", "AugmentationParams", "apply_transform", "augment", "transform_label_grid",
    "CLASS_IDS",
    "CLASS_NAMES", "NUM_CLASSES", "REPORT_ORDER", "ClassMap", "load_class_map", "DenseLabelGrid",
    "PointCloud", "decode_scan", "linear_index", "read_label_grid", "read_scan",
    "write_label_grid", "write_scan", "Box", "Plane", "Pole", "SceneSpec",
    "generate_synthetic_scene", "random_scene_spec", "rasterize", "simulate_scan",
]
