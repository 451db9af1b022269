"""Exception types shared across the package."""


class BllimError(Exception):
    """Base class for all library errors."""


class NotSpdError(BllimError):
    """A covariance matrix failed its Cholesky factorization.

    ``context`` names the offending matrix (cluster index, block, ...) so
    callers can report where the failure happened.
    """

    def __init__(self, message, context=""):
        self.context = context
        super().__init__(f"{message} [{context}]" if context else message)


class DataError(BllimError):
    """Malformed input data (CSV parse failures, shape mismatches).

    ``source``, ``line`` and ``column`` locate the problem when it comes
    from a file; they stay ``None`` for in-memory validation failures.
    """

    def __init__(self, message, source=None, line=None, column=None):
        self.source = source
        self.line = line
        self.column = column
        where = ""
        if source is not None:
            where = f" ({source}"
            if line is not None:
                where += f", line {line}"
            if column is not None:
                where += f", column {column}"
            where += ")"
        super().__init__(message + where)


class DegenerateClusterError(BllimError):
    """A cluster's effective mass fell below the estimable minimum."""

    def __init__(self, cluster, mass, minimum):
        self.cluster = cluster
        self.mass = mass
        self.minimum = minimum
        super().__init__(
            f"cluster {cluster} has effective mass {mass:.3g} "
            f"below the minimum {minimum:.3g}"
        )


class NoModelError(BllimError):
    """Every candidate model failed to fit; carries per-candidate diagnostics."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or []
        super().__init__(message)
