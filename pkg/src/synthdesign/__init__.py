"""Optimal design of panel experiments with synthetic-control style estimators."""

__version__ = "0.1.0"

from .estimators import EffectEstimate, Method, estimate, mse_oracle_check
from .inference import PermutationTest, Scheme, permutation_test
from .objectives import ClosedFormInputs, empirical_objective, theorem1_one_way, theorem1_per_unit, theorem1_two_way
from .panel import Panel, PanelError, TreatmentScenario, apply_treatment, load_panel, subsample
from .selector import Design, DesignProblem, Mode, random_design, select_design, verify_design
from .weights import Variant, WeightConstraints, WeightSolution

__all__ = [
    "ClosedFormInputs",
    "Design",
    "DesignProblem",
    "EffectEstimate",
    "Method",
    "Mode",
    "Panel",
    "PanelError",
    "PermutationTest",
    "Scheme",
    "TreatmentScenario",
    "Variant",
    "WeightConstraints",
    "WeightSolution",
    "apply_treatment",
    "empirical_objective",
    "estimate",
    "load_panel",
    "mse_oracle_check",
    "permutation_test",
    "random_design",
    "select_design",
    "subsample",
    "theorem1_one_way",
    "theorem1_per_unit",
    "theorem1_two_way",
    "verify_design",
]
