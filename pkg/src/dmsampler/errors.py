"""Exception hierarchy shared by every module.

User-facing mistakes (bad parameters, bad config) derive from
:class:`UserError`; failures of the numerics derive from
:class:`NumericError`. The CLI maps the two families to different exit codes.
"""


class UserError(ValueError):
    pass


class ParameterError(UserError):
    pass


class ConfigurationError(UserError):
    pass


class NumericError(ArithmeticError):
    pass


class DegenerateKernelError(NumericError):
    def __init__(self, index, message=None):
        self.index = int(index)
        super().__init__(message or f"kernel row {self.index} sums to zero (isolated point)")


class DegenerateDataError(NumericError):
    pass


class OutOfSupportError(NumericError):
    pass


class DivergenceError(NumericError):
    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"non-finite state at step {self.step}")


class EigensolverError(NumericError):
    pass
