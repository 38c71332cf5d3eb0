"""Quantile and average treatment effects under covariate-adaptive randomization.

Estimators (simple quantile regression, inverse propensity weighting and
strata fixed effects), analytic and bootstrap standard errors, the common
randomization rules and a Monte Carlo harness for rejection-rate studies.
"""

__version__ = "0.1.0"

from .core import (
    CarqError,
    ConfigurationError,
    DegeneratePropensityError,
    DomainError,
    EstimationError,
    QuantileSpec,
    Sample,
    SingularDensityError,
    StrataStats,
    check_loss,
    empirical_quantile,
    strata_stats,
    weighted_quantile,
)
from .assign import SchemeSpec, StrataRule, gamma_of, make_strata
from .estimate import (
    QteEstimate,
    ate,
    imbalance_diagnostic,
    qte,
    qte_contrast,
    qte_ipw,
    qte_sfe,
    qte_sqr,
)
from .variance import VarianceComponents, kde_gaussian, m_hat, se_adjusted, se_naive, silverman_h
from .bootstrap import (
    BootstrapDraws,
    WaldResult,
    ca_draws,
    se_from_draws,
    wald,
    weighted_draws,
)
from .dgp import DgpSpec, GeneratedSample, generate_potential, generate_sample, true_value
from .montecarlo import McConfig, McTable, mc_stderr, run_cell, run_table

# the submodules `assign` and `bootstrap` share their main function names;
# import those functions from the submodules
import types as _types

__all__ = sorted(k for k, v in globals().items()
                 if not k.startswith("_") and not isinstance(v, _types.ModuleType))
