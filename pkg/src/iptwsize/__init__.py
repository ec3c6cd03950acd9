"""Sample size planning for IPTW marginal structural model analyses.

The package estimates the large-sample variance factor (LSVF) of the stacked
propensity/MSM M-estimator from pilot data, stabilizes it with a two-level
bootstrap and converts it to a prospective sample size. Monte Carlo power
simulation over synthetic case studies checks the induced designs.
"""

from iptwsize.data import Dataset, OutcomeKind, load_csv, resample, validate, write_csv
from iptwsize.design import DesignInputs, normal_quantile, rct_variance, required_n, se_target
from iptwsize.errors import (
    BootstrapAbort,
    DataError,
    IPTWSizeError,
    NonEstimableError,
    NumericError,
)
from iptwsize.msm import IDENTITY, LOG, LOGIT, Link, fit_msm
from iptwsize.propensity import Estimand, PSSpec, fit_logistic, weights
from iptwsize.rng import StreamKey
from iptwsize.sandwich import StackedFit, stacked_fit
from iptwsize.stabilize import (
    BootstrapDistribution,
    StabilityFunctional,
    UCBSpec,
    apply_functional,
    bootstrap_lsvf,
    ucb,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapAbort",
    "BootstrapDistribution",
    "DataError",
    "Dataset",
    "DesignInputs",
    "Estimand",
    "IDENTITY",
    "IPTWSizeError",
    "LOG",
    "LOGIT",
    "Link",
    "NonEstimableError",
    "NumericError",
    "OutcomeKind",
    "PSSpec",
    "StabilityFunctional",
    "StackedFit",
    "StreamKey",
    "UCBSpec",
    "apply_functional",
    "bootstrap_lsvf",
    "fit_logistic",
    "fit_msm",
    "load_csv",
    "normal_quantile",
    "rct_variance",
    "required_n",
    "resample",
    "se_target",
    "stacked_fit",
    "ucb",
    "validate",
    "weights",
    "write_csv",
]
