# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Errors that can be raised by this package"""


class BilevelError(Exception):
    """Base class for all errors raised by bilevel_gr"""


class ConfigurationError(BilevelError):
    """Error raised when a solver, problem or experiment configuration is invalid.

    Attributes:
        key (str): The offending key path, e.g. 'solvers[0].aplha', when known.
    """

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{message} (key: {key})"
        super(ConfigurationError, self).__init__(message)


class ShapeMismatchError(BilevelError, ValueError):
    """Error raised when vector or matrix operands do not have compatible shapes."""


class OracleEvaluationError(BilevelError):
    """Error raised when an oracle returns a non-finite value.

    Attributes:
        function (str): The oracle function that misbehaved, e.g. 'grad_omega_cl'.
        probe (int): The probe index (self-test) or outer iteration (solvers).
    """

    def __init__(self, message, function, probe=None):
        self.function = function
        self.probe = probe
        msg = f"{message} (function: {function}, probe: {probe})"
        super(OracleEvaluationError, self).__init__(msg)


class NotPSDError(BilevelError):
    """Error raised when a matrix expected to be positive semidefinite is not."""


class StaleCacheError(BilevelError):
    """Error raised when a forward cache no longer matches the parameters it was built from."""


class SolverDivergedError(BilevelError):
    """Error raised when a solver run produced non-finite parameters.

    Attributes:
        trace (SolverTrace): The trace collected up to the divergence.

    Note:
        The message (str) passed into the exception is used when
        a user converts the exception to a str.
    """

    def __init__(self, message, trace):
        msg = f"{message}\nThe solver stopped with: {trace}"
        self.trace = trace
        super(SolverDivergedError, self).__init__(msg)


class ExperimentDivergedError(BilevelError):
    """Error raised when a mandatory benchmark cell diverged.

    Attributes:
        record (dict): The structured error record also written to error.json.
    """

    def __init__(self, message, record):
        self.record = record
        super(ExperimentDivergedError, self).__init__(message)


class SelfTestFailedError(BilevelError):
    """Error raised when one or more built-in self checks fail.

    Attributes:
        report (SelfTestSuiteReport): The full report of every check.
    """

    def __init__(self, message, report):
        self.report = report
        super(SelfTestFailedError, self).__init__(message)


class UnknownPlotKindError(BilevelError, ValueError):
    """Error raised when plot data is requested for an unsupported kind."""
