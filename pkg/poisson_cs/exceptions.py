class PoissonCSError(Exception):
    """
    Base class for all errors raised by the poisson_cs package.
    """


class LengthMismatch(PoissonCSError, ValueError):
    """
    Two vectors (or a matrix and a vector) do not have compatible lengths.
    """


class DomainError(PoissonCSError, ValueError):
    """
    An input lies outside the domain of a divergence or fit term, e.g. p_i > 0 with q_i = 0.
    """


class InvalidParam(PoissonCSError, ValueError):
    """
    A scalar parameter is out of its admissible range.
    """


class TooManySupports(PoissonCSError):
    """
    Exhaustive RIC estimation would enumerate more supports than the configured cap.
    """


class InfeasibleStart(PoissonCSError):
    """
    No initial point with (A theta)_i + beta > 0 could be built for the solver.
    """


class InfeasibleEpsilon(PoissonCSError):
    """
    The SQJSD constraint radius is below the smallest achievable data-fit value.
    """


class NotConverged(PoissonCSError):
    """
    One or more solves stopped on the iteration cap. Results are still written.
    """


class MissingSamples(PoissonCSError, ValueError):
    """
    A percentile-based choice was requested without (enough) Monte-Carlo samples.
    """


class DegenerateSamples(PoissonCSError, ValueError):
    """
    A sample set has zero spread, so no Gaussian can be fitted to it.
    """
