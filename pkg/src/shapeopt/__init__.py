"""Joint probabilistic/geometric shaping of 4D constellations for
nonlinear WDM fiber links: constellations, channel simulation, rate
estimation, the greedy shaping optimizer, and experiment drivers."""

from .air import AirReport, AuxChannel, awgn_mi_oracle, fit_gaussian_auxiliary, mutual_information
from .channel import (
    LinkConfig,
    SymbolBatch,
    effective_snr,
    sample_symbols,
    simulate_awgn,
    simulate_wdm,
)
from .constellation import (
    AmplitudeClass,
    AmplitudeClassSet,
    Constellation4D,
    MomentReport,
    amplitude_classes,
    apply_class_state,
    build_product_pam16_4d,
    build_product_qam,
    mb_for_awgn_snr,
    mb_pmf,
    md_ball,
    moments,
)
from .errors import (
    ConfigError,
    DegeneratePmfError,
    InvalidComparisonError,
    NumericDivergenceError,
)
from .exchange import (
    read_constellation,
    read_symbol_batch,
    write_constellation,
    write_symbol_batch,
)
from .experiments import (
    AwgnEvaluator,
    ExperimentSpec,
    FiberEvaluator,
    ResultRow,
    desk_link,
    paper_link,
    read_results_csv,
    report_amplitude_pmf,
    run_power_sweep,
    run_size_study,
    write_results_csv,
)
from .optimizer import (
    EvalRecord,
    OptimizerConfig,
    OptimizerTrace,
    candidate_class_state,
    evaluate_candidate,
    optimize,
    shaping_gain,
)

__version__ = "0.1.0"
