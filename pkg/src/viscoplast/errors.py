"""Exception hierarchy shared by all solver modules."""


class ViscoplastError(Exception):
    """Base class for every error raised by the package."""


class SingularEvaluation(ViscoplastError, ArithmeticError):
    """The regularized stress factor is undefined (q < 2, delta = 0, zero argument)."""


class NonConvergence(ViscoplastError, RuntimeError):
    def __init__(self, iterations, residual, what="Newton iteration"):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"{what} did not converge after {iterations} iterations "
            f"(residual {residual:.3e})"
        )


class CFLViolation(ViscoplastError, ValueError):
    def __init__(self, dt, dt_max):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(f"dt={dt:.3e} exceeds the advective bound {dt_max:.3e}")


class VacuumFloor(ViscoplastError, ValueError):
    def __init__(self, rho_min, rho_floor):
        self.rho_min = rho_min
        self.rho_floor = rho_floor
        super().__init__(f"inf rho = {rho_min:.3e} is below the floor {rho_floor:.3e}")


class FixedPointDiverged(ViscoplastError, RuntimeError):
    def __init__(self, iterations, delta, partial=None):
        self.iterations = iterations
        self.delta = delta
        self.partial = partial
        super().__init__(
            f"Picard iteration failed after {iterations} iterations "
            f"(last increment {delta:.3e}); reduce dt"
        )


class Blowup(ViscoplastError, RuntimeError):
    def __init__(self, t, psi, partial=None):
        self.t = t
        self.psi = psi
        self.partial = partial
        super().__init__(f"psi(t={t:.4g}) = {psi:.3e} exceeded the blowup guard")


class MassLoss(ViscoplastError, RuntimeError):
    """Clipping of negative densities removed more mass than allowed."""


class GridMismatch(ViscoplastError, ValueError):
    pass


class ConfigError(ViscoplastError, ValueError):
    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")
