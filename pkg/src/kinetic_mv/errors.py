"""Exception hierarchy. Each error maps to one CLI exit code."""


class KineticMVError(Exception):
    exit_code = 1
    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class InvalidModelError(KineticMVError, ValueError):
    exit_code = 2
    kind = "invalid-model"


class ConfigError(KineticMVError, ValueError):
    exit_code = 2
    kind = "config-error"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

    def to_dict(self):
        d = super().to_dict()
        if self.field is not None:
            d["field"] = self.field
        return d


class BlowUpError(KineticMVError, ArithmeticError):
    exit_code = 3
    kind = "blow-up"

    def __init__(self, step, t, count=1):
        super().__init__(f"{count} particle(s) left the finite range at step {step} (t={t:.17g})")
        self.step = step
        self.t = t
        self.count = count

    def to_dict(self):
        d = super().to_dict()
        d.update(step=self.step, t=self.t, count=self.count)
        return d


class InsufficientDataError(KineticMVError, ValueError):
    exit_code = 4
    kind = "insufficient-data"


class UnsupportedDimensionError(KineticMVError, ValueError):
    exit_code = 2
    kind = "unsupported-dimension"


class DegenerateDensityError(KineticMVError, ValueError):
    exit_code = 4
    kind = "degenerate-density"


class SingularSystemError(KineticMVError, ArithmeticError):
    exit_code = 4
    kind = "singular-system"

    def __init__(self, rank, message=None):
        super().__init__(message or f"moment matrix is singular (rank {rank})")
        self.rank = rank
