"""Sparse nonnegative CP tensor decomposition.

A tensor is factored into nonnegative rank-one components under optional
Frobenius and sparsity regularization, using one of six block-coordinate
methods; see :mod:`sparsecp.solvers`.  Supporting pieces: dense tensor
kernels (:mod:`sparsecp.tensor`), the DNT1 container format
(:mod:`sparsecp.io`), batched NNLS solvers (:mod:`sparsecp.nnls`), recovery
metrics (:mod:`sparsecp.metrics`), and a synthetic benchmark harness
(:mod:`sparsecp.synthetic`).
"""

__version__ = "0.1.0"

from .errors import (
    DntFormatError,
    IllConditionedSubproblemError,
    SparsecpError,
    StaleContextError,
)
from .io import read_dnt, read_matrix, write_dnt
from .metrics import (
    PsnrReport,
    SparsityReport,
    count_nonzero_components,
    metrics_report,
    psnr,
    sparsity_level,
    sparsity_report,
)
from .nnls import (
    KktCertificate,
    NnlsProblem,
    nnls_active_set,
    nnls_block_principal_pivoting,
)
from .objective import (
    IterationTrace,
    PrecomputedNorm,
    fast_ncp_objective,
    format_trace_row,
    full_objective,
    relative_error,
    should_stop,
    write_trace_csv,
)
from .solvers import (
    METHODS,
    ApgState,
    DecompositionResult,
    SolverConfig,
    apg_restart_check,
    decompose,
    gram_spectral_norm,
    init_factors,
    update_als,
    update_anls,
    update_apg,
    update_hals,
    update_mu,
)
from .synthetic import (
    AggregateRow,
    ExperimentGrid,
    GridResult,
    RunRecord,
    SyntheticSpec,
    add_nonnegative_gaussian_noise,
    bundled_sparse_signals,
    default_limits,
    generate_synthetic,
    make_preset,
    run_grid,
    run_seed,
    sparse_signal_matrix,
)
from .tensor import (
    DenseTensor,
    FactorSet,
    SubproblemContext,
    fold,
    gram_excluding,
    khatri_rao,
    kruskal_to_dense,
    mttkrp,
    subproblem_context,
    unfold,
)
