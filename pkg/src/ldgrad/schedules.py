from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigurationError

KINDS = ("constant", "robbins-monro", "inverse-sqrt")


@dataclass(frozen=True)
class StepSchedule:
    """Step-size sequence indexed by t = 1, 2, ...

    constant:       a
    robbins-monro:  a / (b + t)
    inverse-sqrt:   a / (scale * sqrt(t))
    """

    kind: str = "robbins-monro"
    a: float = 1.0
    b: float = 100.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown step schedule {self.kind!r}; expected one of {KINDS}")
        if not (self.a >= 0 and math.isfinite(self.a)):
            raise ConfigurationError("step constant must be finite and non-negative")
        if self.kind == "robbins-monro" and self.b < 0:
            raise ConfigurationError("robbins-monro offset b must be non-negative")
        if self.kind == "inverse-sqrt" and not (self.scale > 0 and math.isfinite(self.scale)):
            raise ConfigurationError("inverse-sqrt scale must be positive and finite")

    @classmethod
    def constant(cls, a: float) -> "StepSchedule":
        return cls("constant", a=a)

    @classmethod
    def robbins_monro(cls, a: float = 1.0, b: float = 100.0) -> "StepSchedule":
        return cls("robbins-monro", a=a, b=b)

    @classmethod
    def inverse_sqrt(cls, c: float, scale: float) -> "StepSchedule":
        return cls("inverse-sqrt", a=c, scale=scale)

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.a
        if self.kind == "robbins-monro":
            return self.a / (self.b + t)
        return self.a / (self.scale * math.sqrt(t))

    def steps(self, start: int, count: int):
        """Vector of step sizes for t = start, ..., start + count - 1."""
        import numpy as np

        t = np.arange(start, start + count, dtype=float)
        if self.kind == "constant":
            return np.full(count, self.a)
        if self.kind == "robbins-monro":
            return self.a / (self.b + t)
        return self.a / (self.scale * np.sqrt(t))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b, "scale": self.scale}
