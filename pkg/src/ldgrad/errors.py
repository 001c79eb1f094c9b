"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, so library code raises them
instead of bare ``ValueError``/``RuntimeError``.
"""


class LdgError(Exception):
    exit_code = 1


class ConfigurationError(LdgError, ValueError):
    """Bad user input: shapes, ranges, unknown names."""

    exit_code = 2


class ModelError(LdgError):
    """The MDP/policy pair violates a modelling assumption (e.g. ergodicity)."""

    exit_code = 3


class AssumptionError(ModelError):
    """A stated assumption of an estimator fails (singular system, dependent features)."""


class StateError(LdgError, RuntimeError):
    """An operation was called before its prerequisite was computed."""

    exit_code = 3


class NumericalError(LdgError, ArithmeticError):
    """A consistency check on computed quantities failed."""

    exit_code = 3
