"""Exception and warning types shared by all qbmor modules."""


class QbmorError(Exception):
    """Base class for failures raised by this package."""


class NumericalError(QbmorError):
    """A numerical routine could not produce a trustworthy result."""


# matrix_equations

class NonDiagonalizable(NumericalError):
    """Eigenvector matrix too ill-conditioned to trust the spectral factors."""


class NotStable(NumericalError):
    """Coefficient matrix has an eigenvalue with nonnegative real part."""


class SolverBreakdown(NumericalError):
    """A dense factorization failed inside a matrix-equation solver."""


class SingularShift(NumericalError):
    """A shifted operator A + lambda*E is numerically singular."""


class PairingViolation(NumericalError):
    """Complex data does not come in adjacent conjugate pairs."""


# qb_core

class SingularGram(NumericalError):
    """W^T V (or W^T E V) is too ill-conditioned to invert."""


class NonPositiveGamma(QbmorError):
    """Rescaling factor must be strictly positive."""


# gramians_norms

class NoConvergence(NumericalError):
    """Fixed-point iteration exhausted its iteration budget."""


# diagnostics

class ProjectorSingular(NumericalError):
    """An oblique projector needed by the residual solves does not exist."""


class TooLarge(QbmorError):
    """Problem dimensions exceed a guard meant for dense cross-checks."""


# reduction_baselines

class RankDeficient(NumericalError):
    """Requested order exceeds the numerical rank of the Gramian product."""


# benchmarks

class NewtonDivergence(NumericalError):
    """Newton refused to converge even at the minimal step size."""


class NonFiniteState(NumericalError):
    """Integrator state left the representable range."""


# warning categories; these report degraded but usable results

class QbmorWarning(UserWarning):
    """Base warning category for this package."""


class IndefiniteGramian(QbmorWarning):
    """A Gramian violated its positive semidefinite floor and was clipped."""


class MaxIterationsExceeded(QbmorWarning):
    """Iteration stopped at the budget; best iterate is returned."""


class DegradedDiagnostics(QbmorWarning):
    """Some residual diagnostics were skipped due to singular shifts."""
