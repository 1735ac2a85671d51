"""Exception types shared across the package."""


class GreenhaulError(Exception):
    """Base class for all package-specific errors."""


class DomainError(GreenhaulError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(GreenhaulError, ValueError):
    """Inconsistent or unusable configuration (empty boxes, bad budgets, ...)."""


class StructureError(GreenhaulError, RuntimeError):
    """A plan or graph object is structurally invalid (broken chaining, unknown ids)."""


class EnergyGainCycleError(GreenhaulError, RuntimeError):
    """The road network contains a cycle with net negative weight.

    For energy weights this means a physically impossible perpetual-motion
    loop; for priced weights it makes shortest paths unbounded.
    """


class OracleSizeError(GreenhaulError, RuntimeError):
    """The brute-force search refuses instances above its hard size caps."""
