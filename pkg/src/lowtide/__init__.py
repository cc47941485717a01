"""lowtide: optimal-transport token watermarking on explicit probability
vectors, with baselines, detectors, and numerical verification."""

from .core import (
    Coupling,
    ConditionalLaw,
    DegenerateCouplingError,
    TokenDistribution,
    conditional_from_coupling,
    expected_score_gap,
    is_low_entropy,
    min_entropy,
    spike_distribution,
)
from .detect import (
    DetectionReport,
    InfiniteCEError,
    WatermarkSize,
    ZeroNullVarianceError,
    cross_entropy,
    detect,
    detect_correlated_channel,
    detect_gumbel,
    detect_red_green,
    gumbel_exact_p,
    normal_cdf,
    normal_sf,
    watermark_size,
    z_test_report,
)
from .harness import (
    AttackConfig,
    DirichletIID,
    MarkovChain,
    SourceConfig,
    SpikeIID,
    SweepRow,
    attack,
    detect_for_scheme,
    generate,
    run_trial,
    sweep,
)
from .schemes import (
    CorrelatedChannel,
    DegenerateSupportError,
    Gumbel,
    HeavyWater,
    RedGreen,
    SchemeConfig,
    SimplexWater,
    TiltConfig,
    WatermarkStep,
    correlated_channel_step,
    gumbel_step,
    maximal_coupling,
    ot_watermark_step,
    red_green_step,
    tilt_binary,
    tilt_signed,
    top_p_filter,
)
from .scores import (
    Random,
    ScoreFamily,
    ScoreMatrix,
    SimplexBinary,
    SimplexQary,
    gamma_family,
    gaussian_family,
    gumbel_family,
    load_score_matrix,
    lognormal_family,
    null_moments,
    qary_simplex_score,
    random_score,
    save_score_matrix,
    simplex_score,
)
from .sideinfo import (
    SideInfoConfig,
    SideInfoStream,
    bits_per_token,
    mix64,
    raw_seed,
)
from .sinkhorn import (
    NonConvergenceError,
    NumericalUnderflowError,
    SinkhornConfig,
    SinkhornError,
    SolveStats,
    cost_from_scores,
    log_domain_solve,
    solve,
    solve_auto,
)
from .theory import (
    GapCertificate,
    TailIntegral,
    empirical_gap_convergence,
    exact_spike_coupling,
    hamming_gap,
    plotkin_bound,
    sinkhorn_spike_gap,
    spike_gap_by_vertex_enumeration,
    tail_integral,
)

__version__ = "0.1.0"
