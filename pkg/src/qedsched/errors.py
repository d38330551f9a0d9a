"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class QedError(Exception):
    """Base class for all errors raised by qedsched."""


# parameters
class BalanceViolation(QedError, ValueError):
    pass


class NonPositiveRate(QedError, ValueError):
    pass


class NegativeAbandonment(QedError, ValueError):
    pass


class RateUnderflow(QedError, ValueError):
    pass


# costs
class NegativeQueue(QedError, ValueError):
    pass


class SimplexViolation(QedError, ValueError):
    pass


class UnsupportedSpec(QedError, ValueError):
    pass


# HJB solver
class NoConvergence(QedError, RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class SingularLinearSystem(QedError, RuntimeError):
    pass


class NonMonotoneScheme(QedError, AssertionError):
    pass


class EmptyStencil(QedError, AssertionError):
    pass


# simulator
class InvariantBreach(QedError, RuntimeError):
    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message if state is None else f"{message}; state={state}")
        self.state = state


class PolicyContractViolation(QedError, RuntimeError):
    pass


# policies
class NonIntegerTotal(QedError, ValueError):
    pass


class EmptyK0(QedError, AssertionError):
    pass


class NonConvexCost(QedError, ValueError):
    pass


class ZeroTheta(QedError, ValueError):
    pass


class ConfigError(QedError, ValueError):
    pass
