from kernels.features import DEFAULT_PRIOR_FEATURES, FeatureMap, sample_rff
from kernels.kernel import (
    InputMatrix,
    KernelFamily,
    KernelOperator,
    KernelSpec,
    RowCache,
    cross,
    cross_matvec,
    eval_kernel,
    gram,
    kernel_gradient_matvec,
    matvec,
    row,
    rows,
)

__all__ = [
    "DEFAULT_PRIOR_FEATURES",
    "FeatureMap",
    "InputMatrix",
    "KernelFamily",
    "KernelOperator",
    "KernelSpec",
    "RowCache",
    "cross",
    "cross_matvec",
    "eval_kernel",
    "gram",
    "kernel_gradient_matvec",
    "matvec",
    "row",
    "rows",
    "sample_rff",
]
