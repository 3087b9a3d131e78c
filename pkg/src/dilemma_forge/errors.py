"""Exception taxonomy shared across the package.

ConfigurationError maps to CLI exit code 2, everything else to 3.
"""


class ConfigurationError(ValueError):
    """A game spec, experiment config, or config file is invalid."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (bad action, terminal state, ...)."""
