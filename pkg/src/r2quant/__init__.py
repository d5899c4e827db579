"""2-bit weight quantization by residual refinement of two 1-bit kernels."""

from .errors import (
    DivergenceDetected,
    EmptyGroup,
    FormatError,
    GroupTooLarge,
    IndexOutOfRange,
    MissingForwardCache,
    ParseError,
    R2QError,
    SchemeMismatch,
    ShapeMismatch,
    UnsupportedScheme,
)
from .onebit import BinaryKernel, binarize_group, binarize_matrix, brute_force_onebit, dequantize_onebit
from .r2q import R2QTensor, codebook, dequantize, quantize, residual
from .rtn import RTNTensor, dequantize_rtn, quantize_rtn
from .tensor import PER_CHANNEL, GroupScheme, partition, reassemble

__version__ = "0.1.0"
