"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, protocol violations with 3, numerical blow-ups with 4.
"""


class GmcfError(Exception):
    pass


class ConfigError(GmcfError):
    """Invalid configuration: bad key, bad value, or inconsistent setup."""


class ProtocolError(GmcfError):
    """Messaging contract violated: bad addressing, timestamp drift, wrong data id."""


class NumericsError(GmcfError):
    """A numerical stage produced non-finite values."""

    def __init__(self, stage: str, detail: str = ""):
        self.stage = stage
        msg = f"non-finite values after stage '{stage}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DeadlockError(GmcfError):
    """All live workers blocked on empty queues in sequential mode."""
