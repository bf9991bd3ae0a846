"""Exception types raised across the package."""


class WavelengthRangeError(ValueError):
    """Wavelength outside the validity window of a dielectric model."""

    def __init__(self, wavelength, window):
        self.wavelength = wavelength
        self.window = window
        super().__init__(
            f"wavelength {wavelength!r} nm outside valid window "
            f"{window[0]:.1f}-{window[1]:.1f} nm"
        )


class FitError(RuntimeError):
    """A least-squares fit did not reach the requested quality."""

    def __init__(self, message, misfit=None):
        self.misfit = misfit
        super().__init__(message)


class SingularityError(ArithmeticError):
    pass


class NumericError(ArithmeticError):
    pass


class GeometryError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, estimate=None, bound=None):
        self.estimate = estimate
        self.bound = bound
        super().__init__(message)


class InstabilityError(RuntimeError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"FDTD field diverged at time step {step}")


class ResourceError(MemoryError):
    def __init__(self, estimate_bytes, budget_bytes):
        self.estimate_bytes = estimate_bytes
        self.budget_bytes = budget_bytes
        super().__init__(
            f"estimated memory {estimate_bytes / 2**20:.1f} MiB exceeds "
            f"budget {budget_bytes / 2**20:.1f} MiB"
        )


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class TrajectoryError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
