"""Error types shared across the package."""


class DriftLabError(Exception):
    """Base class for all driftlab errors."""


class TopologyError(DriftLabError):
    """Invalid graph or combination matrix."""


class ModelError(DriftLabError):
    """Invalid risk-model specification or unsupported model operation."""


class ConfigError(DriftLabError):
    """Invalid experiment configuration (maps to CLI exit code 1)."""


class NonConvergenceError(DriftLabError):
    """An iterative routine exhausted its budget (maps to CLI exit code 2)."""


class DivergenceError(DriftLabError):
    """A simulated trajectory exceeded the divergence threshold."""
