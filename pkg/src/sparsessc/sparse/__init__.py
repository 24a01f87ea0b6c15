from . import autograd, ops
from .autograd import Tape, Var
from .kernel_map import KernelMap, build_kernel_map, build_output_coords
from .nn import BatchNorm, Conv, Identity, Linear, Module
from .tensor import AlignmentError, CoordSet, SparseTensor, kernel_offsets

__all__ = [
    "autograd", "ops", "Tape", "Var", "KernelMap", "build_kernel_map", "build_output_coords",
    "BatchNorm", "Conv", "Identity", "Linear", "Module", "AlignmentError", "CoordSet",
    "SparseTensor", "kernel_offsets",
]
