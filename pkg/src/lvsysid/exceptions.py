"""Exception hierarchy.

Every failure mode that callers may want to branch on has its own class;
all of them derive from :class:`SysIdError`.
"""


class SysIdError(Exception):
    """Base class for all package errors."""


# grid model
class GridSchemaError(SysIdError, ValueError):
    pass


class UnknownCable(GridSchemaError):
    pass


class DanglingReference(GridSchemaError):
    pass


class DisconnectedGraph(GridSchemaError):
    pass


class UnobservableBranch(SysIdError):
    pass


# transforms
class PhasorRequired(SysIdError, ValueError):
    pass


class AsymmetricImpedance(SysIdError, ValueError):
    pass


# simulation
class PowerFlowDiverged(SysIdError, RuntimeError):
    def __init__(self, mismatch, iterations):
        super().__init__(
            f"power flow did not converge after {iterations} iterations "
            f"(max mismatch {mismatch:.3e} pu)"
        )
        self.mismatch = mismatch
        self.iterations = iterations


# identification
class IncompleteMeasurement(SysIdError, ValueError):
    pass


class AmbiguousCluster(SysIdError):
    pass


class NoPath(SysIdError):
    pass


class InsufficientExcitation(SysIdError):
    pass


class DegenerateRegression(SysIdError):
    pass


class InfeasibleSubproblem(SysIdError):
    pass


class NoFeasibleAssignment(SysIdError):
    pass


# optimization kernels
class SingularKkt(SysIdError, ArithmeticError):
    pass


class Infeasible(SysIdError):
    pass


class ConfigError(SysIdError, ValueError):
    pass
