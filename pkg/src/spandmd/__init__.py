"""spandmd: linear-operator replacement of residual-network block spans.

Fit a single time-invariant map K from depth-wise hidden-state snapshots
(full-state or anchored to the post-attention residual), predict p blocks
ahead via K^p, compare against an unconstrained endpoint map and an
identity baseline, and run the supporting sweeps and statistics at desk
scale.
"""

from .errors import (
    DegenerateTokenError,
    FormatError,
    FormulationError,
    GenerationError,
    SpandmdError,
    ValidationError,
)
from .linalg import (
    SvdFactors,
    inv_sqrt_psd,
    matrix_power,
    pca_project,
    ridge_solve,
    truncated_svd,
)
from .metrics import (
    AggregateStat,
    MetricRecord,
    aggregate,
    cosine_similarity,
    evaluate,
    norm_ratio,
    r2_brh,
    relative_l2,
)
from .operators import (
    DEFAULT_ALPHA,
    FitConfig,
    FittedOperator,
    ModeSet,
    cut_distances,
    endpoint_mse,
    extract_modes,
    fit_operator,
    fit_pcr,
    fit_replaceme,
    fit_rrr,
    fuse_into_mlp,
    load_operator,
    predict,
    save_operator,
    select_cut,
)
from .snapshot import (
    DataMatrixPair,
    SnapshotSpan,
    SpanDims,
    expected_file_size,
    read_span,
    stack_pairs,
    stack_residual_pairs,
    write_span,
)
from .sources import FileSource, LinearSource, ToySource, make_source
from .stats import (
    CandidateConstants,
    FriedmanResult,
    PowerLawFit,
    candidate_constants,
    chi_square_sf,
    fit_power_law,
    friedman_nemenyi,
    nemenyi_cd,
)
from .toymodel import (
    LinearSystem,
    ToyBlockParams,
    ToyModel,
    fold_layerscale,
    forward_with_taps,
    generate_linear_span,
    make_inputs,
    make_toy_model,
    random_linear_system,
    run_remaining_blocks,
)

__version__ = "0.1.0"
