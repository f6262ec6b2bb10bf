"""Online bipartite matching and online stochastic matching toolkit."""

from .algorithms import ALGORITHMS, MatcherConfig, MatchState, run
from .analysis import DEFAULT_THETA, gamma_balance, gamma_half, gamma_swor
from .arrivals import ArrivalSequence, adversarial_order, sample_poisson_arrivals
from .fractional import FractionalMatching, estimate_fractional_matching_mc, solve_natural_lp
from .graph import TypeGraph, load_type_graph, parse_edge_list, random_type_graph
from .harness import ExperimentConfig, RatioReport, emit_report, run_experiment
from .offline import HindsightOracle, max_cardinality_matching, max_weight_matching

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "MatcherConfig", "MatchState", "run",
    "DEFAULT_THETA", "gamma_balance", "gamma_half", "gamma_swor",
    "ArrivalSequence", "adversarial_order", "sample_poisson_arrivals",
    "FractionalMatching", "estimate_fractional_matching_mc", "solve_natural_lp",
    "TypeGraph", "load_type_graph", "parse_edge_list", "random_type_graph",
    "ExperimentConfig", "RatioReport", "emit_report", "run_experiment",
    "HindsightOracle", "max_cardinality_matching", "max_weight_matching",
]
