"""Orthogonal-projection LoRA: projectors, adapters, interference metrics and a toy harness."""
from .adapter import (
    AdapterConfig,
    AdapterState,
    effective_update,
    forward,
    grad,
    init_adapter,
    load_checkpoint,
    merge,
    save_checkpoint,
)
from .densela import SvdFactorization, qr_decompose, svd_exact, svd_randomized
from .errors import (
    DataError,
    DimensionError,
    FingerprintError,
    FormatError,
    OploraError,
    ParameterError,
    RankError,
    SizeError,
    UndefinedMetricError,
)
from .io import read_matrix, write_matrix
from .metrics import AlignmentReport, preservation_check, rho_k, rho_k_bilateral, rho_sweep
from .projection import (
    ProjectorPair,
    apply_left,
    apply_right,
    build_projectors,
    project_onto_topk,
)

__version__ = "0.1.0"
