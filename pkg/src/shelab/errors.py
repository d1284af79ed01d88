"""Exception types shared across the lattice SHE laboratory."""


class ConfigError(ValueError):
    """A configuration value violates a model constraint."""


class RegimeError(ValueError):
    """Parameters fall outside the regime an operation is defined for."""


class TorusSizeError(ValueError):
    """Torus too small for the requested accuracy."""

    def __init__(self, message, suggested_n=None):
        super().__init__(message)
        self.suggested_n = suggested_n


class ResolutionError(RuntimeError):
    """Quadrature grid cannot resolve the requested evaluation."""

    def __init__(self, message, required_nodes=None):
        super().__init__(message)
        self.required_nodes = required_nodes


class DiagnosticsError(RuntimeError):
    """Numerical diagnostics of a random-walk family failed."""


class EmbeddingError(RuntimeError):
    """Covariance embedding on the torus lost too much mass to clipping."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to converge; carries the last estimates."""

    def __init__(self, message, estimates=None):
        super().__init__(message)
        self.estimates = estimates


class CouplingError(ValueError):
    """Lattices are not nested, so refinement noise cannot be coupled."""


class BlowUpError(RuntimeError):
    """The simulated field produced NaN/Inf values."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class PowerIterationError(RuntimeError):
    """Power iteration did not reach the requested residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class RegressionError(ValueError):
    """Regression input is degenerate (too few points or no spread)."""
