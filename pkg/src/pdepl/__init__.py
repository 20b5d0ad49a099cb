"""Profile-likelihood uncertainty analysis for semidiscretized PDE models."""

from .errors import (CapabilityError, ConfigurationError, EstimationError,
                     InfeasibleConstraintError, ObjectiveEvaluationError,
                     PdeplError, SimulationError)
from .models import (ModelSpec, Trajectory, YeastModelConfig,
                     YEAST_PARAM_NAMES, YEAST_TRUE_THETA, TOL_PROD, TOL_TIGHT,
                     build_yeast_model, load_yeast_config, simulate,
                     single_node_model)
from .sensitivities import (SensitivityBundle, adjoint_gradient,
                            forward_sensitivities)
from .likelihood import (Dataset, NoiseSpec, Observation, ObsOps,
                         generate_data, fim, nll, nll_grad, nll_hess)
from .targets import (CustomTarget, ParameterRatioTarget, ParameterTarget,
                      ProfileTarget, StateRatioTarget)
from .objective import BoundTarget, Counters, PdeObjective, QuadraticObjective
from .estimate import (ConstrainedFit, FitResult, OptimizerConfig,
                       YEAST_BOUNDS_LOG10, constrained_fit,
                       constrained_fit_objective, fit, fit_objective,
                       latin_hypercube)

__version__ = "0.1.0"
