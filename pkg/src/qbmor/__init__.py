"""Model order reduction for quadratic-bilinear control systems."""

import os

# Pin BLAS threading before numpy loads so repeated runs of the same command
# produce identical floating-point results. QBMOR_THREADS=k forces k threads.
_threads = os.environ.get("QBMOR_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from qbmor.errors import (  # noqa: E402,F401
    QbmorError, NumericalError, QbmorWarning,
)
from qbmor.kron_tensor import Hessian  # noqa: E402,F401
from qbmor.qb_core import (  # noqa: E402,F401
    QBSystem, ReducedModel, project, rescale,
    save_system, load_system, save_reduced, load_reduced,
)
from qbmor.gramians_norms import (  # noqa: E402,F401
    truncated_gramians, quadratic_gramians,
    truncated_h2_norm, h2_norm, truncated_h2_error, error_system,
)
from qbmor.tqb_irka import (  # noqa: E402,F401
    IrkaConfig, IrkaReport, tqb_irka, solve_bases, initial_guess,
)
from qbmor.diagnostics import (  # noqa: E402,F401
    optimality_residuals, verify_against_bruteforce,
)
from qbmor.reduction_baselines import balanced_truncation  # noqa: E402,F401
from qbmor.benchmarks import (  # noqa: E402,F401
    chafee_infante, fitzhugh_nagumo, input_signal,
    simulate, output_errors, to_csv,
)
