"""Exception hierarchy shared by every vlsero module."""


class VlseroError(Exception):
    """Base class for all errors raised by vlsero."""


class ConfigError(VlseroError):
    """Configuration is missing keys or holds invalid values.

    All problems found in one pass are collected in ``problems`` so a user can
    fix a config file in one go.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


class DataValidationError(VlseroError):
    """Input data violates the documented schema or the record invariants.

    ``violations`` is a list of ``(file, line, message)`` tuples. Line numbers
    count the CSV header as line 1; ``None`` means the problem is not tied to a
    single row.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [(None, None, violations)]
        self.violations = list(violations)
        lines = []
        for file_name, line, message in self.violations:
            where = file_name or "<dataset>"
            if line is not None:
                where = f"{where}:{line}"
            lines.append(f"{where}: {message}")
        super().__init__("data validation failed:\n  " + "\n  ".join(lines))


class IneligibleDataError(DataValidationError):
    """A person cannot be fitted, e.g. because no swab is positive."""


class SupportError(VlseroError):
    """A parameter state lies outside the model support."""


class TruncationError(VlseroError):
    """Rejection sampling exceeded its retry cap for a named constraint."""

    def __init__(self, constraint, attempts):
        self.constraint = constraint
        self.attempts = attempts
        super().__init__(f"rejection cap of {attempts} draws exceeded for constraint: {constraint}")


class NumericalError(VlseroError):
    """A computation produced a non-finite value where a finite one is required."""

    def __init__(self, message, dump=None):
        self.dump = dump or {}
        super().__init__(message)
