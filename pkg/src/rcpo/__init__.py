"""Constrained policy optimisation on tabular CMDPs.

The package provides exact CMDP evaluation (``rcpo.cmdp``, ``rcpo.oracle``),
step-size schedules, three training algorithms (``rcpo.agents``), simulated
environments (``rcpo.envs``) and a reproducible experiment harness
(``rcpo.harness``).
"""

from .cmdp import (
    CMDPValidationError,
    ConstraintKind,
    ConstraintSpec,
    PenalizedValueTable,
    Step,
    TabularCMDP,
    Trajectory,
    evaluate_constraint,
    evaluate_policy_exact,
    penalized_reward,
    penalized_value_exact,
)
from .rollout import EvalResult, evaluate_policy
from .schedules import StepSchedule, parse_schedule, validate_timescales

__version__ = "0.1.0"
