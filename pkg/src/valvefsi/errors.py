"""Exception types shared across the package."""


class ValveFsiError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ValveFsiError):
    """Invalid or inconsistent simulation configuration."""


class MeshGenerationError(ValveFsiError):
    """Benchmark geometry could not be meshed with the requested parameters."""


class MeshValidationError(ValveFsiError):
    """A generated mesh pair violates a structural invariant."""


class InvertedElementError(ValveFsiError):
    """A cell has non-positive volume in the configuration being evaluated."""

    def __init__(self, cell: int, detail: str = ""):
        self.cell = cell
        msg = f"inverted element in cell {cell}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class AssemblyError(ValveFsiError):
    """A local element contribution contained non-finite entries."""

    def __init__(self, cell: int, detail: str = ""):
        self.cell = cell
        msg = f"non-finite local contribution in cell {cell}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class LinearSolveError(ValveFsiError):
    """Sparse factorization or triangular solve failed."""


class NonConvergenceError(ValveFsiError):
    """Newton iteration exhausted its budget without meeting the tolerance."""

    def __init__(self, history, max_iter):
        self.history = list(history)
        self.max_iter = max_iter
        super().__init__(
            f"Newton did not converge in {max_iter} iterations; "
            f"residual history {self.history}"
        )


class AssumptionViolation(ValveFsiError):
    """A valve lost contact with the solid (its weighted contact volume vanished)."""

    def __init__(self, valve: str, volume: float, threshold: float):
        self.valve = valve
        self.volume = volume
        self.threshold = threshold
        super().__init__(
            f"valve '{valve}' contact volume {volume:.3e} fell below {threshold:.3e}; "
            "the attachment-force model requires the valve to intersect the solid"
        )
