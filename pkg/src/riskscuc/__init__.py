"""Risk-aware security-constrained unit commitment.

Deterministic DA SCUC, RT DCOPF with dual-based LMPs, a PCA uncertainty set,
a grid-search adversary and a cut-based decomposition, plus out-of-sample
evaluation and a stochastic CVaR benchmark.
"""
__version__ = "0.1.0"

from .adversary import AdversaryResult, solve_adversary
from .dcopf_rt import (RtSolution, Scenario, consumer_exposure, exposure_by_bus, producer_surplus,
                       solve_dcopf)
from .decomposition import (Cut, RiskAwareSCUC, RiskAwareSolution, make_l_shaped_cut, make_lbbd_cut,
                            make_no_good_cut, solve_risk_aware)
from .errors import CaseFormatError, RiskScucError, SolverError, ValidationError
from .evaluation import (EvalReport, SampleSpec, StochasticSolution, evaluate_schedules, sample_stressors,
                         solve_stochastic_scuc)
from .power_system import (Bus, HistoryMatrix, Line, PowerSystem, ThermalGenerator, TimeStructure,
                           WindGenerator, load_case, load_history)
from .scuc_da import (CommitmentSchedule, DaDispatch, DeterministicSCUC, build_da_model, da_pricing_run,
                      solve_deterministic)
from .solver import ModelHandle, SolveResult, solve_lp, solve_mip
from .uncertainty import (PCAUncertaintySet, StressorVector, UncertaintySet, build_uncertainty_set,
                          grid_points, realize)

__all__ = [
    "AdversaryResult", "Bus", "CaseFormatError", "CommitmentSchedule", "Cut", "DaDispatch",
    "DeterministicSCUC", "EvalReport", "HistoryMatrix", "Line", "ModelHandle", "PCAUncertaintySet",
    "PowerSystem", "RiskAwareSCUC", "RiskAwareSolution", "RiskScucError", "RtSolution", "SampleSpec",
    "Scenario", "SolveResult", "SolverError", "StochasticSolution", "StressorVector", "ThermalGenerator",
    "TimeStructure", "UncertaintySet", "ValidationError", "WindGenerator", "build_da_model",
    "build_uncertainty_set", "consumer_exposure", "da_pricing_run", "evaluate_schedules", "exposure_by_bus",
    "grid_points", "load_case", "load_history", "make_l_shaped_cut", "make_lbbd_cut", "make_no_good_cut",
    "producer_surplus", "realize", "sample_stressors", "solve_adversary", "solve_dcopf",
    "solve_deterministic", "solve_lp", "solve_mip", "solve_risk_aware", "solve_stochastic_scuc",
]
