"""
Error types shared across the pipeline.

Every error derives from a built-in so callers that only know about
ValueError / RuntimeError keep working.
"""

from typing import Optional


class InputError(ValueError):
    """Rejected input: non-finite values, bad shapes, degenerate data."""


class ConfigValidationError(ValueError):
    """A pipeline config failed validation; names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class StaleArtifactError(ValueError):
    """An artifact no longer matches the digest recorded in its manifest."""

    def __init__(self, path: str, expected: str, actual: str):
        self.path = path
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"stale artifact {path}: manifest records sha256 {expected}, "
            f"file hashes to {actual}"
        )


class DivergenceError(RuntimeError):
    """Integration produced a non-finite or runaway state."""

    def __init__(self, step: int, message: str = "", window: Optional[int] = None,
                 row: Optional[int] = None):
        self.step = step
        self.window = window
        self.row = row
        self.detail = message
        where = f"step {step}" if window is None else f"window {window}, step {step}"
        super().__init__(f"trajectory diverged at {where}" + (f": {message}" if message else ""))

    def in_window(self, window: int) -> "DivergenceError":
        """Return a copy of this error tagged with a window index."""
        return DivergenceError(self.step, self.detail, window=window, row=self.row)


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at iteration {iteration}")


class WhamConvergenceError(RuntimeError):
    """WHAM did not reach the requested tolerance."""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"WHAM did not converge after {iterations} iterations "
            f"(last max |df| = {residual:.3e})"
        )
