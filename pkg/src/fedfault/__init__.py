"""Federated fault diagnosis with distance-aware uncertainty.

A simulation framework that trains spectral-normalized Gaussian-process
classifiers on vibration spectra across simulated clients, clusters clients
by the similarity their prediction uncertainty reveals, aggregates models
per cluster, and resolves out-of-distribution test data across clusters.
"""

from .clustering import ApConfig, ClusterAssignment, affinity_propagation
from .errors import (
    ConfigError,
    DegenerateInput,
    EmptyDataset,
    EmptyInput,
    EmptyResample,
    FedFaultError,
    LabelError,
    NoWindows,
    NumericalError,
    PlanError,
    ShapeError,
    ZeroVector,
)
from .federation import (
    ClientState,
    ClusterModelInfo,
    ExperimentResult,
    OodDecision,
    RoundLog,
    StrategyConfig,
    UncertaintyMatrix,
    aggregate_by_cluster,
    build_cosine_similarity_matrix,
    build_uncertainty_matrix,
    cluster_exemplar_models,
    cosine_similarity,
    make_client_states,
    ood_resolve,
    pca_parameter_trajectories,
    run_experiment,
    run_round,
    similarity_from_uncertainty,
    weighted_average,
)
from .scenarios import (
    ClientData,
    ClientPlan,
    Metrics,
    ScenarioSpec,
    build_clients,
    builtin_scenario_presets,
    evaluate,
    preset_scenario_spec,
    preset_synth_spec,
)
from .signal import (
    ConditionShift,
    Dataset,
    RawSignal,
    SynthSpec,
    power_spectrum,
    preprocess_signal,
    resample,
    segment,
    synth_generate,
    synth_generate_by_condition,
    train_test_split,
)
from .sngp import (
    Prediction,
    SngpConfig,
    SngpModel,
    dataset_variance,
    init_model,
    load_model,
    mc_prob_variance,
    predict,
    save_model,
    train_epochs,
)

__version__ = "0.1.0"

__all__ = [
    "ApConfig",
    "ClientData",
    "ClientPlan",
    "ClientState",
    "ClusterAssignment",
    "ClusterModelInfo",
    "ConditionShift",
    "ConfigError",
    "Dataset",
    "DegenerateInput",
    "EmptyDataset",
    "EmptyInput",
    "EmptyResample",
    "ExperimentResult",
    "FedFaultError",
    "LabelError",
    "Metrics",
    "NoWindows",
    "NumericalError",
    "OodDecision",
    "PlanError",
    "Prediction",
    "RawSignal",
    "RoundLog",
    "ScenarioSpec",
    "ShapeError",
    "SngpConfig",
    "SngpModel",
    "StrategyConfig",
    "SynthSpec",
    "UncertaintyMatrix",
    "ZeroVector",
    "affinity_propagation",
    "aggregate_by_cluster",
    "build_clients",
    "build_cosine_similarity_matrix",
    "build_uncertainty_matrix",
    "builtin_scenario_presets",
    "cluster_exemplar_models",
    "cosine_similarity",
    "dataset_variance",
    "evaluate",
    "init_model",
    "load_model",
    "make_client_states",
    "mc_prob_variance",
    "ood_resolve",
    "pca_parameter_trajectories",
    "power_spectrum",
    "predict",
    "preprocess_signal",
    "preset_scenario_spec",
    "preset_synth_spec",
    "resample",
    "run_experiment",
    "run_round",
    "save_model",
    "segment",
    "similarity_from_uncertainty",
    "synth_generate",
    "synth_generate_by_condition",
    "train_epochs",
    "train_test_split",
    "weighted_average",
]
