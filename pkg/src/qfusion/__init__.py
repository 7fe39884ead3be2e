"""Decision-level sentiment fusion with incompatible quantum observables."""
from .estimation import (
    ObservableSet,
    SampleProbs,
    TrainingStats,
    UtteranceState,
    compute_training_stats,
    estimate_observables,
    estimate_utterance_state,
)
from .fusion import FusionModel, Metrics, Prediction, evaluate, fit, hard_vote, predict, soft_vote, weighted_vote
from .solver import ResidualSystem, SolveReport, SolverConfig, grid_oracle, solve_local, solve_multistart

__all__ = [
    "FusionModel", "Metrics", "ObservableSet", "Prediction", "ResidualSystem", "SampleProbs", "SolveReport",
    "SolverConfig", "TrainingStats", "UtteranceState", "compute_training_stats", "estimate_observables",
    "estimate_utterance_state", "evaluate", "fit", "grid_oracle", "hard_vote", "predict", "soft_vote",
    "solve_local", "solve_multistart", "weighted_vote",
]
__version__ = "0.1.0"
