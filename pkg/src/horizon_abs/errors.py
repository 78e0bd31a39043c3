"""Exception hierarchy shared by the library and the CLI.

Each error class carries the process exit code the CLI maps it to:
1 for input/parse problems, 2 for unsatisfiable specifications,
3 for infeasible discretizations, 4 for validation failures.
"""


class HorizonError(Exception):
    exit_code = 1


class ModelError(HorizonError):
    """Malformed or inconsistent model document."""
    exit_code = 1


class ExprError(ModelError):
    """Lexing, parsing or evaluation failure in the expression language."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class InfeasibleError(HorizonError):
    """No admissible space-time discretization under the requested settings."""
    exit_code = 3


class UnsatisfiableError(HorizonError):
    """The timed-reachability specification admits no plan."""
    exit_code = 2


class ValidationError(HorizonError):
    """Closed-loop validation found a cell-membership mismatch."""
    exit_code = 4


class PlanConsistencyError(ValidationError):
    """A plan file contradicts the abstraction it claims to come from."""
    exit_code = 4


class IntegrationError(HorizonError):
    """Step-halving audit exceeded the integration tolerance."""
    exit_code = 1
