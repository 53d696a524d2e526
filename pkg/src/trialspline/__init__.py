"""Longitudinal trial analysis with natural-spline and categorical time.

Constrained-baseline mean models, maximum-likelihood GLS with several
within-subject covariance structures, marginal-mean contrasts with
Satterthwaite degrees of freedom, and a simulation harness for power and
Type I error of preclinical Alzheimer's trials.
"""
__version__ = "0.1.0"

from .covariance import CovKind, CovParams, CovSpec, subject_cov
from .dataset import TrialData, complete_cases, load_csv, write_csv
from .errors import *  # noqa: F401,F403
from .estimator import FitResult, aic, fit, fit_gls_ml, fit_proportional
from .inference import (Contrast, contrast_curve, emm_contrast, mean_curve, sandwich_vcov,
                        satterthwaite_df, wald_theta)
from .meanmodel import MeanKind, MeanSpec, build_design, predict_mean
from .ncs_basis import SplineBasis, eval_basis, eval_basis_deriv2, make_basis, make_basis_explicit
from .padsim import GeneratorModel, PadConfig, simulate_trial
