"""Exception hierarchy shared by all hamlab modules."""


class HamlabError(Exception):
    """Base class for every error raised by hamlab."""


class EvaluationError(HamlabError):
    """A Hamiltonian, gradient or Hessian evaluated to a non-finite value."""


class CatalogLookupError(HamlabError, KeyError):
    pass


class EscapeError(HamlabError):
    """Trajectory left the integration domain."""

    def __init__(self, exit_time, message=None):
        self.exit_time = float(exit_time)
        super().__init__(message or f"trajectory escaped the domain at t={self.exit_time:.6g}")


class StiffnessError(HamlabError):
    """The implicit stage equation did not converge."""

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"implicit solve did not converge at t={self.time:.6g}")


class RegularityError(HamlabError):
    """Point too close to a critical point of H for a normal frame."""


class RefinementError(HamlabError):
    """Newton refinement of a recurrence did not produce a closed orbit."""


class ConditioningError(HamlabError):
    pass


class ClassificationError(HamlabError):
    pass


class ContractError(HamlabError, ValueError):
    """A documented precondition of an operation was violated."""


class WindowRangeError(HamlabError, ValueError):
    pass


class BudgetError(HamlabError):
    """A perturbation schedule cannot be realized within the per-step budget.

    ``min_length`` carries the estimated minimal number of steps (window or
    cocycle length) for which the request would become feasible.
    """

    def __init__(self, message, min_length=None):
        self.min_length = min_length
        super().__init__(message)


class EmptySurfaceError(HamlabError):
    pass


class NumericError(HamlabError):
    """Overflow or loss of finiteness in a numerical reduction."""
