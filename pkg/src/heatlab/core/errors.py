from __future__ import annotations


class HeatlabError(Exception):
    """Base class for every error raised by heatlab."""


class InvalidPolynomialError(HeatlabError, ValueError):
    pass


class GeometryError(HeatlabError, ValueError):
    pass


class GridError(HeatlabError, ValueError):
    pass


class OperatorKindError(HeatlabError, ValueError):
    pass


class NotHermitianError(HeatlabError, ValueError):
    pass


class UnsupportedKernelError(HeatlabError, ValueError):
    pass


class ConfigError(HeatlabError, ValueError):
    pass


class UnknownTheoremError(HeatlabError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown theorem"


class ConvergenceError(HeatlabError, RuntimeError):
    """Iterative engine hit its cap; `best_residual` is the smallest residual seen."""

    def __init__(self, message: str, *, best_residual: float, iterations: int) -> None:
        super().__init__(f"{message} (best residual {best_residual:.3e} after {iterations} iterations)")
        self.best_residual = best_residual
        self.iterations = iterations


class SolverError(HeatlabError, RuntimeError):
    def __init__(self, message: str, *, residual: float) -> None:
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class SzegoTruncationError(HeatlabError, ValueError):
    def __init__(self, requested: int, max_admissible: int) -> None:
        super().__init__(
            f"holomorphic degree K={requested} fails the mass criterion; max admissible K is {max_admissible}"
        )
        self.requested = requested
        self.max_admissible = max_admissible


class CFLViolationError(HeatlabError, ValueError):
    def __init__(self, ratio: float, suggested_dt: float) -> None:
        super().__init__(f"CFL ratio {ratio:.3f} exceeds 0.5; use dt <= {suggested_dt:.6g}")
        self.ratio = ratio
        self.suggested_dt = suggested_dt


class DomainCapacityError(HeatlabError, ValueError):
    pass


class DegenerateSamplesError(HeatlabError, ValueError):
    pass
