"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration or mismatched tensor shapes."""


class NumericalExplosion(ArithmeticError):
    """Raised when a non-finite value shows up in activations, loss or gradients.

    ``stage`` and ``block`` are zero-based and ``None`` when the location is
    not a backbone block (e.g. the loss or a gradient).
    """

    def __init__(self, where: str, stage: int | None = None, block: int | None = None):
        self.where = where
        self.stage = stage
        self.block = block
        loc = where
        if stage is not None:
            loc += f" (stage {stage}, block {block})"
        super().__init__(f"non-finite value in {loc}")
