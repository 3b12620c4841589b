"""Survival analysis with vital health processes.

Joint laws of a health process and survival time specified through the
survival density and the Gaussian law of health values indexed by time
before death, with censored-data likelihoods, staged and joint fitting,
simulation under fixed and sequential appointment schemes, and tools for
exposure processes and finite-process checks.
"""

from .core import FLAT, Censored, Dataset, Death, ModelParams, PatientRecord, read_dataset, validate
from .density import (ClinicalPredictive, clinical_predictive, joint_density, log_joint_density,
                      log_marginal_density, marginal_density)
from .errors import *  # noqa: F401,F403
from .likelihood import (FitResult, FourFactors, censored_compatibility, dataset_loglik, fit_conditional_gaussian,
                         fit_joint, fit_marginal_survival, four_factor, record_loglik)
from .quadrature import QuadratureConfig
from .revival import CovarianceModel, CurveBasis, MeanModel
from .simulate import (ConstantGapPolicy, FixedSchedule, ValueDependentPolicy, detect_off_schedule,
                       simulate_dataset, simulate_fixed, simulate_sequential)
from .survival import SurvivalFamily

__version__ = "0.1.0"
