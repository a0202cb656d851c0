"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A parameter is outside its allowed range or inconsistent with another."""


class ConfigParseError(ConfigurationError):
    """A configuration document could not be parsed.

    Attributes:
        key: offending key, if known.
        line: 1-based line number in the source document, if known.
    """

    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line


class UndefinedStatisticError(ArithmeticError):
    """A ratio statistic was requested with an empty denominator."""
