"""Object descriptions and the catalog of benchmark objects.

All quantities are SI (kg, m). ``ObjectSpec.from_table`` accepts the
gram/millimetre units used in object tables and converts them.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .exceptions import DomainError

GRAVITY = -9.81  # signed: "+ m*g" in the force balance points downward


@dataclass(frozen=True)
class ObjectSpec:
    mass: float
    l: float
    w: float
    mu_A: float = 0.3
    mu_B: float = 0.3
    mu_P: float = 0.8
    shape: str = "rectangle"
    l1: Optional[float] = None
    l2: Optional[float] = None
    w1: Optional[float] = None
    w2: Optional[float] = None
    name: str = field(default="object", compare=False)

    def __post_init__(self):
        if not self.mass > 0:
            raise DomainError(f"mass must be positive, got {self.mass}")
        if not (self.l > 0 and self.w > 0):
            raise DomainError("length and width must be positive")
        for key in ("mu_A", "mu_B", "mu_P"):
            mu = getattr(self, key)
            if not 0.0 < mu <= 2.0:
                raise DomainError(f"{key} must lie in (0, 2], got {mu}")
        peg_dims = (self.l1, self.l2, self.w1, self.w2)
        if self.shape == "rectangle":
            if any(d is not None for d in peg_dims):
                raise DomainError("rectangle objects take no peg dimensions")
        elif self.shape == "peg":
            if any(d is None or d <= 0 for d in peg_dims):
                raise DomainError("peg objects need positive l1, l2, w1, w2")
            # stepped rectangle: a thick head (l1 x w2) and a thinner shaft
            if not (self.l1 < self.l2 and self.w1 < self.w2):
                raise DomainError("peg needs l1 < l2 and w1 < w2")
        else:
            raise DomainError(f"unknown shape {self.shape!r}")

    @classmethod
    def from_table(cls, mass_g, l_mm, w_mm, mu=(0.3, 0.3, 0.8), name="object"):
        """Build from gram / millimetre values; pegs pass ``(l1, l2)``, ``(w1, w2)``."""
        mu_A, mu_B, mu_P = mu
        if np.ndim(l_mm) == 1:
            l1, l2 = (float(v) * 1e-3 for v in l_mm)
            w1, w2 = (float(v) * 1e-3 for v in w_mm)
            return cls(mass=mass_g * 1e-3, l=l2, w=w2, mu_A=mu_A, mu_B=mu_B,
                       mu_P=mu_P, shape="peg", l1=l1, l2=l2, w1=w1, w2=w2,
                       name=name)
        return cls(mass=mass_g * 1e-3, l=l_mm * 1e-3, w=w_mm * 1e-3,
                   mu_A=mu_A, mu_B=mu_B, mu_P=mu_P, name=name)

    @property
    def weight(self) -> float:
        """Signed weight force m*g (negative)."""
        return self.mass * GRAVITY

    @property
    def face_width(self) -> float:
        """Width of the face the manipulator pushes on."""
        return self.w1 if self.shape == "peg" else self.w

    @property
    def step_angle(self) -> float:
        """Angle at which the peg's floor contact switches corners."""
        if self.shape != "peg":
            raise DomainError("step angle is only defined for pegs")
        return float(np.arctan2(self.w2 - self.w1, self.l2 - self.l1))

    @property
    def n_modes(self) -> int:
        return 2 if self.shape == "peg" else 1

    def replace(self, **changes) -> "ObjectSpec":
        return replace(self, **changes)


CATALOG = {
    "gear1": ObjectSpec.from_table(140, 84, 20, name="gear1"),
    "gear2": ObjectSpec.from_table(100, 121, 9.5, name="gear2"),
    "gear3": ObjectSpec.from_table(280, 84, 20, name="gear3"),
    "peg1": ObjectSpec.from_table(45, (36, 40), (20, 28), name="peg1"),
    "peg2": ObjectSpec.from_table(85, (28, 40), (10, 11), name="peg2"),
    "peg3": ObjectSpec.from_table(85, (28, 40), (10, 27.5), name="peg3"),
}


def get_object(name: str) -> ObjectSpec:
    try:
        return CATALOG[name]
    except KeyError:
        raise DomainError(f"unknown object {name!r}; known: {sorted(CATALOG)}") from None


def weight_to_mass(eps: float) -> float:
    """Convert a weight-force perturbation [N] to a mass perturbation [kg]."""
    return eps / abs(GRAVITY)
