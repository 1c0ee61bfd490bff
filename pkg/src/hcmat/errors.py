class ConfigError(ValueError):
    """Invalid parameters or inputs, detected before any computation."""


class DegenerateDomainError(ValueError):
    """A subdomain has no interior (or no interface) vertices."""


class FactorizationError(ArithmeticError):
    """A dense pivot block is (numerically) singular."""

    def __init__(self, message, block_id=None, condition=None):
        super().__init__(message)
        self.block_id = block_id
        self.condition = condition
