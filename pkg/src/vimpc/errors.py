"""Exception types raised across the package."""


class VimpcError(Exception):
    """Base class for all package errors."""


class UsageError(VimpcError, ValueError):
    """Bad arguments: dimension mismatch, missing artifact, invalid config."""


class RiccatiDivergenceError(VimpcError):
    def __init__(self, iterations: int):
        super().__init__(f"Riccati divergence after {iterations} iterations")
        self.iterations = iterations


class RankDeficientError(VimpcError):
    pass


class InnerMinimizationError(VimpcError):
    """Every start of the inner input minimization hit its iteration cap."""

    def __init__(self, message, best_u, best_value):
        super().__init__(message)
        self.best_u = best_u
        self.best_value = best_value


class RolloutDivergedError(VimpcError):
    def __init__(self, step: int, message: str = ""):
        text = f"rollout diverged at step {step}"
        if message:
            text = f"{text}: {message}"
        super().__init__(text)
        self.step = step


class CertificationError(VimpcError):
    """A horizon-certificate constant could not be estimated or is invalid."""
