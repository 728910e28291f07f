"""Optimal cluster randomised trial designs.

Identifies designs minimising the variance of the treatment-effect
estimator of a generalised linear mixed model over discrete design
spaces: exact closed forms, continuous weight optimisation, rounding
schemes, and combinatorial subset searches, each validated against
independent oracles.
"""
from .apportion import RoundingResult, adams_round, best_rounding, hamilton_round
from .covariance import CovarianceSpec, ModelSpec
from .designspace import (Cell, Design, DesignLayout, DesignSpace,
                          ExperimentalUnit, build_d, build_x, build_z,
                          expand_design, sequence_patterns,
                          space_from_sequences, standard_space)
from .errors import (ConvergenceError, EnumerationLimitError, InfeasibleError,
                     NumericDomainError, ValidationError)
from .exact import (CellMeanParams, design_coefficients,
                    optimal_switch_ordering, stepped_wedge_weights,
                    treatment_precision, unidirectional_weights)
from .glscore import (DesignCriterion, aggregate_cluster_periods, build_sigma,
                      c_optimality, glm_weight_diagonal, information_matrix,
                      treatment_contrast, unit_information_blocks)
from .robust import ModelClass, ModelEntry, RobustCriterion, robust_criterion
from .search import SearchResult, local_search, reverse_greedy, swap_delta
from .validate import (MonteCarloResult, ProbeReport, brute_force_optimum,
                       monte_carlo_variance, supermodularity_probe,
                       write_simulation_csv)
from .weights import (WeightedDesign, mixed_model_weights, project_to_simplex,
                      simplex_weight_descent)

__version__ = "0.1.0"

__all__ = [
    "Cell", "CellMeanParams", "ConvergenceError", "CovarianceSpec", "Design",
    "DesignCriterion", "DesignLayout", "DesignSpace", "EnumerationLimitError",
    "ExperimentalUnit", "InfeasibleError", "ModelClass", "ModelEntry",
    "ModelSpec", "MonteCarloResult", "NumericDomainError", "ProbeReport",
    "RobustCriterion", "RoundingResult", "SearchResult", "ValidationError",
    "WeightedDesign", "adams_round", "aggregate_cluster_periods",
    "best_rounding", "brute_force_optimum", "build_d", "build_sigma",
    "build_x", "build_z", "c_optimality", "design_coefficients",
    "expand_design", "glm_weight_diagonal", "hamilton_round",
    "information_matrix", "local_search", "mixed_model_weights",
    "monte_carlo_variance", "optimal_switch_ordering", "project_to_simplex",
    "reverse_greedy", "robust_criterion", "sequence_patterns",
    "simplex_weight_descent", "space_from_sequences", "standard_space",
    "stepped_wedge_weights", "supermodularity_probe", "swap_delta",
    "treatment_contrast", "treatment_precision", "unidirectional_weights",
    "unit_information_blocks", "write_simulation_csv",
]
