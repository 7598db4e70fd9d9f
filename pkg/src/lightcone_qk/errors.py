class ValidationError(ValueError):
    """Raised when an input violates an operation's preconditions."""


class LoadError(ValueError):
    """Raised when a feature table cannot be parsed.

    ``problems`` holds ``(line_number, message)`` pairs for every offending row.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems)
        super().__init__(f"failed to load feature table: {lines}")
