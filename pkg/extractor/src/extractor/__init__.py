"""Video and image-directory feature extraction into FSEQ files."""

from .fseq import FseqWriteError, read_header, save_fseq
from .frames import InputError, iter_frames
from .network import (
    CUT_DIMS,
    CUT_NAMES,
    DEFAULT_CUT,
    FeatureExtractor,
    WeightsError,
    build_network,
    output_dim,
)
from .pipeline import ExtractConfig, extract

__version__ = "0.1.0"

__all__ = [
    "CUT_DIMS",
    "CUT_NAMES",
    "DEFAULT_CUT",
    "ExtractConfig",
    "FeatureExtractor",
    "FseqWriteError",
    "InputError",
    "WeightsError",
    "build_network",
    "extract",
    "iter_frames",
    "output_dim",
    "read_header",
    "save_fseq",
    "__version__",
]
