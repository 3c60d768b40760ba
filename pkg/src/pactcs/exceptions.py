"""Exception types shared across the solvers."""


class DivergenceError(RuntimeError):
    """An iterative solver produced a non-finite value."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class StaleCacheError(RuntimeError):
    """A backward pass was given a cache from a different forward pass."""
