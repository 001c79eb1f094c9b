"""Log density gradient estimation for tabular MDPs.

Exact solvers (``exact``), TD learning (``td``), the min-max estimator
(``minmax``) and policy-optimisation experiments (``harness``).
"""
from .errors import (AssumptionError, ConfigurationError, LdgError, ModelError, NumericalError,
                     StateError)
from .exact import (GradTable, OccupancyTable, exact_policy_gradient_classical,
                    exact_policy_gradient_ldg, policy_performance, solve_log_density_gradient,
                    solve_occupancy)
from .features import FeatureMap
from .mdp import SoftmaxPolicy, TabularMdp, load_mdp, make_bandit, make_gridworld, random_mdp
from .schedules import StepSchedule

__version__ = "0.1.0"
