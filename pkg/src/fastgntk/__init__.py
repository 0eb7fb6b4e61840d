"""Graph neural tangent kernels with exact, decoupled and sketched aggregation."""

from .gntk import Backend, GntkConfig, KernelMatrix, Readout, build_kernel
from .graphs import Dataset, Graph, Scaling, load_dataset

__all__ = [
    "Backend", "Dataset", "GntkConfig", "Graph", "KernelMatrix", "Readout",
    "Scaling", "build_kernel", "load_dataset",
]
__version__ = "0.1.0"
