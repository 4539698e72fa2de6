"""Desk-scale simulator for a multimode comb-filter photon storage line.

The package models the full measurement chain of a storage-and-recall
counting experiment: a pulsed photon-pair source with tunable
multiphoton statistics, a periodic absorption comb acting as a linear
recall filter, realistic single-photon detection (efficiency, jitter,
dark counts, dead time), and the correlation estimators used to grade
the stored light.
"""

from afcsim.analysis import (
    CorrelationResult,
    ModeMatrixResult,
    Windowing,
    coincidence_histogram,
    cross_correlation,
    extract_efficiencies,
    heralded_autocorrelation,
    mode_matrix,
    unheralded_autocorrelation,
)
from afcsim.comb import (
    AfcDesign,
    CombProfile,
    EchoResponse,
    EfficiencyBreakdown,
    TransferFunction,
    build_comb_profile,
    dephasing_factor,
    design_afc,
    echo_efficiency,
    echo_response,
    efficiency_breakdown,
    transfer_function,
)
from afcsim.config import ExperimentConfig, load_config, save_config
from afcsim.detection import (
    ChannelModel,
    MemoryAction,
    TimingSequence,
    apply_memory,
    dead_time_filter,
    detect,
)
from afcsim.fitting import MODELS, FitError, FitResult, fit_nonlinear
from afcsim.pipeline import PRESET_NAMES, RunResult, preset, run_experiment
from afcsim.source import (
    SourceConfig,
    click_g2,
    click_probabilities,
    predict_rates,
    sample_emissions,
    theoretical_g2,
)

__version__ = "0.1.0"

__all__ = [
    "AfcDesign",
    "ChannelModel",
    "CombProfile",
    "CorrelationResult",
    "EchoResponse",
    "EfficiencyBreakdown",
    "ExperimentConfig",
    "FitError",
    "FitResult",
    "MODELS",
    "MemoryAction",
    "ModeMatrixResult",
    "PRESET_NAMES",
    "RunResult",
    "SourceConfig",
    "TimingSequence",
    "TransferFunction",
    "Windowing",
    "apply_memory",
    "build_comb_profile",
    "click_g2",
    "click_probabilities",
    "coincidence_histogram",
    "cross_correlation",
    "dead_time_filter",
    "dephasing_factor",
    "design_afc",
    "detect",
    "echo_efficiency",
    "echo_response",
    "efficiency_breakdown",
    "extract_efficiencies",
    "fit_nonlinear",
    "heralded_autocorrelation",
    "load_config",
    "mode_matrix",
    "predict_rates",
    "preset",
    "run_experiment",
    "sample_emissions",
    "save_config",
    "theoretical_g2",
    "transfer_function",
    "unheralded_autocorrelation",
    "__version__",
]
