"""Continuous-time graph-process simulation with exact equilibrium
verification."""

from .graphs import (
    Graph,
    NeighborClass,
    Toggle,
    all_toggles,
    apply_toggle,
    edge_count,
    hamming_neighbors,
    mutual_count,
)
from .potentials import (
    PotentialSpec,
    ReferenceMeasure,
    StatisticTerm,
    change_score,
    potential,
    potential_spec,
    statistics,
)
from .processes import (
    Family,
    LogWeight,
    ProcessSpec,
    equilibrium_form,
    equilibrium_log_weight,
    exit_rate,
    rate,
    rate_vector,
    saom_actor_hazard,
    saom_choice_probabilities,
)

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "Toggle",
    "NeighborClass",
    "all_toggles",
    "apply_toggle",
    "hamming_neighbors",
    "edge_count",
    "mutual_count",
    "StatisticTerm",
    "ReferenceMeasure",
    "PotentialSpec",
    "potential_spec",
    "statistics",
    "potential",
    "change_score",
    "Family",
    "ProcessSpec",
    "LogWeight",
    "rate",
    "rate_vector",
    "exit_rate",
    "equilibrium_log_weight",
    "equilibrium_form",
    "saom_actor_hazard",
    "saom_choice_probabilities",
    "__version__",
]
