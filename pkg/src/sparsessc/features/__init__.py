from .normals import NormalMap, PointNormals, back_assign_normals, compute_normals
from .projection import (DilationConfig, Projection, RangeImage, dilate_depth, masked_median,
                         pixel_of, spherical_project)
from .tensors import (FEATURES_2D, FEATURES_3D, FeatureConfig, ScanFeatures, build_sparse_2d,
                      build_sparse_3d, extract_features, read_image_dump, write_image_dump)
from .tsdf import TsdfSamples, compute_ftsdf, ftsdf_value

__all__ = [
    "NormalMap", "PointNormals", "back_assign_normals", "compute_normals", "DilationConfig",
    "Projection", "RangeImage", "dilate_depth", "masked_median", "pixel_of", "spherical_project",
    "FEATURES_2D", "FEATURES_3D", "FeatureConfig", "ScanFeatures", "build_sparse_2d",
    "build_sparse_3d", "extract_features", "read_image_dump", "write_image_dump", "TsdfSamples",
    "compute_ftsdf", "ftsdf_value",
]
