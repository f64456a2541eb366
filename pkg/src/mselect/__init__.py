"""Multiple-outcome Heckman selection models with matrix-normal errors.

The public surface re-exported here covers the common workflow; the
submodules hold the lower-level kernels.
"""

__version__ = "0.1.0"

from .bootstrap import BootstrapReport, percentile_ci
from .ecm import FitConfig, FitResult, e_step, fit, initialize
from .errors import (
    BootstrapUnstableError,
    CovarianceUpdateError,
    DegenerateTruncationError,
    DimensionError,
    FitError,
    InsufficientDataError,
    MselectError,
    PDViolationError,
    RankDeficiencyError,
    RecordError,
    UnreachableRateError,
)
from .likelihood import LoglikBreakdown, classical_heckman_loglik, loglik, loglik_record
from .matcore import RectProbResult, matnorm_logpdf, mvn_logpdf, mvn_rect_prob
from .model import (
    CensorPartition,
    Dataset,
    ModelParams,
    ObservationRecord,
    OutcomeDesign,
    censor_partition,
    sigma_matrix,
)
from .sim import compare_univariate, generate, run_mc, scenario1, scenario2
from .sun import conditional_mean_mc_oracle, mills_correction, sun_params
from .truncmoments import TruncMoments, conditional_censored_moments, tmvn_moments
