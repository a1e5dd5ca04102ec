"""Anomaly identification and localization lab for simulated cloud deployments."""

from .simulator import (
    DeploymentTopology,
    InjectionEvent,
    InjectionSchedule,
    KpiDataset,
    Scenario,
    StateDistribution,
    SystemState,
    TopologyError,
    Variant,
    build_topology,
    plan_injections,
    reference_config,
    sample_state,
    simulate,
    synthesize,
)
from .graph import EdgeList, build_edges, encode_edge_attrs, neighbors
from .dataset import (
    FoldPlan,
    GraphSample,
    Normalizer,
    fit_normalizer,
    label_window,
    logo_folds,
    slice_windows,
    window_dataset,
)
from .autodiff import AdamState, Tape, Tensor, adam_step, load_checkpoint, save_checkpoint
from .model import (
    ARVALUS,
    D_ARVALUS,
    ModelParams,
    classify,
    edge_weights,
    extract_node_features,
    forward,
    graph_convolve,
    init_params,
    param_count,
    predict_proba,
)
from .training import ExperimentData, FoldResult, TrainConfig, focal_loss, run_experiment, train_fold
from .evaluation import (
    classification_report,
    localize_event,
    map_score,
    pr_at_k,
    rank_locations,
    scenario_accuracy,
)

__version__ = "0.1.0"
