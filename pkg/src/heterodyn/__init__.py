"""Stable subspaces of coupled unstable ODEs on heterogeneous random graphs.

The package samples expected-degree random graphs with a hub/tail split,
integrates block-coupled linear systems driven by a graph Laplacian, and
measures exponential dichotomies through finite-time Lyapunov spectra.
Campaigns check the probabilistic degree and spectral bounds over the
ensemble.
"""

from .dichotomy import (
    DichotomyReport,
    LinearSystem,
    LyapunovSpectrum,
    RoughnessReport,
    WindowConstants,
    fit_dichotomy,
    lyapunov_spectrum,
    roughness_check,
    stable_dimension,
    theorem_windows,
    verify_roughness_numerically,
)
from .dynamics import (
    BlowupError,
    CoupledSystem,
    CouplingMatrix,
    DriftFamily,
    drift_at,
    evolve_operator,
    evolve_state,
    instability_constants,
    kron,
    system_matrix,
)
from .experiments import (
    BifurcationEvent,
    CampaignResult,
    MonteCarloEstimate,
    SweepResult,
    Theorem1Result,
    emit_report,
    run_concentration_campaign,
    run_lambda_max_campaign,
    run_theorem1,
    run_theorem3_sweep,
    wilson_interval,
)
from .graphgen import (
    ConcentrationReport,
    ExpectedDegreeSequence,
    FeasibilityError,
    Graph,
    HeterogeneityParams,
    PowerIterationError,
    build_heterogeneous_sequence,
    check_concentration,
    edge_probability,
    lambda_max,
    laplacian,
    sample_graph,
    second_order_average,
)

__version__ = "0.1.0"
