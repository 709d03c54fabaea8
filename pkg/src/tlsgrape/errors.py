"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Malformed user input: states, pulses, configs, or grids."""


class PositivityError(ArithmeticError):
    """A density matrix has a negative eigenvalue beyond tolerance."""


class IntegrationError(RuntimeError):
    """The propagator produced a non-physical state (step size too large)."""
