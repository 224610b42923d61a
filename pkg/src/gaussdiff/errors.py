"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid argument value or inconsistent dimensions."""


class SingularityError(ParameterError):
    """A matrix that must be inverted is singular (or not positive definite)."""


class NumericalInstabilityError(RuntimeError):
    """A propagated state or covariance blew up.

    Carries the sampler name and the timestep at which the guard tripped.
    """

    def __init__(self, model: str, t: int, detail: str = ""):
        self.model = model
        self.t = t
        msg = f"numerical instability in {model} at t={t}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
