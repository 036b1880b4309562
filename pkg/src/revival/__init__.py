"""Revival models: time-reversed health processes jointly with survival times."""

from .exceptions import (CensoredRecordError, ConvergenceError, ConvergenceWarning, DataError,
                         NumericalError, RankDeficiencyError, RevivalError)
from .gp import (RevivalGP, VarianceComponent, VarianceModelSpec, build_design,
                 compare_alignment_models, fit_reml, growth_curve_variance,
                 likelihoods_comparable, test_revival_assumption)
from .kernels import (Kernel, constant, cubic_spline, exponential, fractional_brownian, gram,
                      linear_spline_generalized, log_warp, thin_plate, white_noise)
from .mean import (Covariate, Intercept, InverseLinear, MeanFunction, MeanModelSpec,
                   RevivalTime, SurvivalTime, TimeAccelerated, Treatment)
from .predict import (closed_form_linear_ratio, censored_contribution, censored_score,
                      log_density_ratio, predictive_survival)
from .process import GaussianRevivalProcess
from .records import (NULL_ARM, ArmSchedule, Censored, Dataset, Death, HealthRecord, History,
                      RevivalView, arm_at_revival, reverse, validate)
from .survival import (ExponentialSurvival, KaplanMeier, WeibullSurvival, fit_exponential,
                       fit_kaplan_meier, fit_survival, fit_weibull)

__version__ = "0.1.0"
