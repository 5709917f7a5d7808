"""Dose grid: ordered dose levels with dosage amounts and a toxicity skeleton."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Skeleton calibrated for a 0.25 toxicity target over four levels.
DEFAULT_SKELETON = (0.05, 0.12, 0.25, 0.38)


class InputError(ValueError):
    """Invalid caller-supplied value."""


class NumericalError(RuntimeError):
    """A numerical routine produced non-finite intermediate values."""


@dataclass(frozen=True)
class DoseGrid:
    """J ordered dose levels. ``dosage[j]`` is the drug amount at level j+1
    (mg or mg/m^2) and ``skeleton[j]`` the prior toxicity probability."""

    dosage: tuple = field(default_factory=tuple)
    skeleton: tuple = DEFAULT_SKELETON

    def __post_init__(self):
        dosage = tuple(float(d) for d in self.dosage)
        skeleton = tuple(float(p) for p in self.skeleton)
        object.__setattr__(self, "dosage", dosage)
        object.__setattr__(self, "skeleton", skeleton)
        if len(skeleton) < 2:
            raise InputError("need at least 2 dose levels")
        if dosage and len(dosage) != len(skeleton):
            raise InputError("dosage and skeleton lengths differ")
        if not all(0.0 < p < 1.0 for p in skeleton):
            raise InputError("skeleton probabilities must lie in (0,1)")
        if not all(a < b for a, b in zip(skeleton, skeleton[1:])):
            raise InputError("skeleton must be strictly increasing")
        if dosage and not all(a < b for a, b in zip(dosage, dosage[1:])):
            raise InputError("dosages must be strictly increasing")

    @property
    def n_levels(self) -> int:
        return len(self.skeleton)

    def levels(self) -> range:
        """1-based dose levels."""
        return range(1, self.n_levels + 1)

    def to_dict(self) -> dict:
        return {"dosage": list(self.dosage), "skeleton": list(self.skeleton)}

    @classmethod
    def from_dict(cls, d: dict) -> "DoseGrid":
        return cls(dosage=tuple(d.get("dosage", ())), skeleton=tuple(d["skeleton"]))


def closest_level(probs, target: float) -> int:
    """1-based level whose probability is closest to ``target``.

    Ties (within 1e-12, so equidistant decimals compare equal despite float
    representation) break toward the lower level.
    """
    probs = np.asarray(probs, dtype=float)
    diffs = np.abs(probs - target)
    return int(np.flatnonzero(diffs <= diffs.min() + 1e-12)[0]) + 1
