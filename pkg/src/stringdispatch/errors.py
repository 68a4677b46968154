"""Exception hierarchy shared by all modules.

Every error carries the name of the module that raised it so the command
line can report provenance and pick an exit code.
"""


class StringDispatchError(Exception):
    module = "stringdispatch"
    exit_code = 4

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class ConfigurationError(StringDispatchError, ValueError):
    module = "config"
    exit_code = 2


class IngestionError(StringDispatchError, ValueError):
    module = "prices"
    exit_code = 3


class DomainError(StringDispatchError, ValueError):
    module = "model"


class InfeasiblePowerError(DomainError):
    """Requested DC power exceeds what the cell can deliver."""

    module = "ecm"


class SetpointError(StringDispatchError, ValueError):
    module = "twin"


class BatteryExpiredError(StringDispatchError):
    module = "aging"


class StringRetiredError(StringDispatchError):
    module = "dispatch"


class OracleScopeError(StringDispatchError, ValueError):
    module = "dispatch"


class SolverError(StringDispatchError, RuntimeError):
    module = "dispatch"
