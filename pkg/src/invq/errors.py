class InvqError(Exception):
    """Base class for errors raised by invq."""


class ModelValidationError(InvqError, ValueError):
    """A transition model, policy or table failed validation."""


class ConvergenceError(InvqError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class InfeasibleConstraintError(InvqError, ValueError):
    """Some state has an empty safe action set."""

    def __init__(self, states):
        self.states = sorted(int(s) for s in states)
        shown = ", ".join(map(str, self.states[:10]))
        more = "" if len(self.states) <= 10 else f" (+{len(self.states) - 10} more)"
        super().__init__(f"empty safe action set in state(s) {shown}{more}")
