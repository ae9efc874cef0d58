"""Average treatment effects under confounding and outcome attrition.

Graph checks for sequential adjustment pairs, super-learner nuisance fits,
the targeted sequential regression estimator with comparators, exact
discrete-model oracles and a Monte Carlo harness.
"""

from .estimators import (DIPW, TSR, ConditionalDensityPlugin, Dataset, EstimateReport,
                         EstimationError, SequentialRegression, TMLE1R, TMLECC, Unadjusted,
                         estimate_cd_discrete, estimate_dipw, estimate_sr, estimate_tmle_1r,
                         estimate_tmle_cc, estimate_tsr, estimate_unadjusted)
from .graph import (AdmissiblePair, GraphError, MGraph, d_separated, enumerate_minimal_pairs,
                    is_s_admissible, parse_graph)
from .learners import SuperLearner, SuperLearnerSpec

__version__ = "0.1.0"

__all__ = [
    "AdmissiblePair", "ConditionalDensityPlugin", "DIPW", "Dataset", "EstimateReport",
    "EstimationError", "GraphError", "MGraph", "SequentialRegression", "SuperLearner",
    "SuperLearnerSpec", "TMLE1R", "TMLECC", "TSR", "Unadjusted", "d_separated",
    "enumerate_minimal_pairs", "estimate_cd_discrete", "estimate_dipw", "estimate_sr",
    "estimate_tmle_1r", "estimate_tmle_cc", "estimate_tsr", "estimate_unadjusted",
    "is_s_admissible", "parse_graph",
]
