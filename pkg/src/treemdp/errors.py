"""Exception types shared across the package."""


class TreeMdpError(Exception):
    """Base class for all package-specific errors."""


class ConvergenceError(TreeMdpError):
    """An iterative solve did not reach the requested tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EnumerationBudgetError(TreeMdpError):
    """The brute-force search space exceeds the configured budget."""

    def __init__(self, space_size, budget):
        super().__init__(
            f"enumeration space of {space_size:,} candidates exceeds budget {budget:,}"
        )
        self.space_size = space_size
        self.budget = budget


class InfeasibleModelError(TreeMdpError):
    """The solver reported infeasibility (always a formulation bug here)."""


class BackendError(TreeMdpError):
    """A solver backend crashed or produced unusable output."""


class ExtractionError(TreeMdpError):
    """A solution assignment does not define a unique tree."""


class FileFormatError(TreeMdpError):
    """A serialized MDP, tree, MPS, or solution file is malformed."""
