"""Exception hierarchy shared by the library and the command-line tool."""


class SemcoError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 2


class DataError(SemcoError, ValueError):
    """Malformed or inconsistent input data (files, labels, graphs)."""

    exit_code = 2


class UnanchoredComponentError(DataError):
    pass


class LabelUnresolvableError(DataError, KeyError):
    def __init__(self, label, index=None):
        self.label = label
        self.index = index
        where = f" (class index {index})" if index is not None else ""
        super().__init__(f"label unresolvable: {label!r}{where}")

    def __str__(self):
        return self.args[0]


class NumericalError(SemcoError, ArithmeticError):
    """Non-finite losses, gradients or parameters."""

    exit_code = 3


class ConfigError(SemcoError):
    exit_code = 1
