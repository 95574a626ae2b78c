"""Exception types shared across the package."""


class VolfemError(Exception):
    """Base class for package-specific failures."""


class SolverBreakdownError(VolfemError):
    """Raised when an iterate produces a nonpositive curvature p'Kp.

    Signals a non-SPD operator, usually caused by a wrong mask or an
    indefinite material field.
    """

    def __init__(self, message, sample_index=None):
        if sample_index is not None:
            message = f"{message} (sample {sample_index})"
        super().__init__(message)
        self.sample_index = sample_index


class NonSPDError(VolfemError):
    """Dense factorization failed: the free-DOF block is not SPD."""


class UnsupportedPhysicsError(VolfemError):
    """Requested operation is undefined for the given material/physics."""
