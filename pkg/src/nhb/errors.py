"""Exception types shared across the package."""


class ContractError(ValueError):
    """An input violated a documented precondition (shape, range, finiteness)."""


class DomainError(ValueError):
    """A configuration lies outside the potential's domain, where U is +inf."""


class PotentialError(ValueError):
    """A potential specification was rejected at construction."""


class StencilError(RuntimeError):
    """A finite-difference stencil could not be placed inside the domain."""


class StepError(RuntimeError):
    """An integrator step could not be completed inside the domain.

    The state the step started from is attached as ``state``.
    """

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step


class InfeasibleTargetError(ValueError):
    """A control target is not reachable at the requested horizon."""


class UnreachableError(RuntimeError):
    """No in-domain path was found between two configurations."""


class ConfigError(ValueError):
    """A run configuration failed validation."""
