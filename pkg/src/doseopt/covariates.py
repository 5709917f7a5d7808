"""Categorical patient characteristics and their dummy coding.

Each characteristic has C_h levels; the reference level is dropped, leaving
C_h - 1 indicator columns.  When the direction of association with response
is known, the characteristic carries a response-increasing ordering of its
levels and every indicator gets a truncated slab whose sign is the level's
position relative to the reference.  Reordering the reference level changes
only the coding, never the underlying patient values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from doseopt.grid import InputError

GAUSSIAN = "gaussian"
TRUNC_POS = "truncated_positive"
TRUNC_NEG = "truncated_negative"


@dataclass(frozen=True)
class Characteristic:
    name: str
    levels: tuple  # level names, index 0 .. C_h-1
    prevalence: tuple  # sampling probability per level
    reference: str  # name of the reference level
    response_order: tuple = ()  # level names from weakest to strongest response, or empty
    slab_sd: float = 5.0
    q_char: float = 0.5
    q_level: float = 0.5

    def __post_init__(self):
        if len(self.levels) < 2:
            raise InputError(f"{self.name}: need at least two levels")
        if len(self.prevalence) != len(self.levels):
            raise InputError(f"{self.name}: prevalence length mismatch")
        if abs(sum(self.prevalence) - 1.0) > 1e-9:
            raise InputError(f"{self.name}: prevalences must sum to 1")
        if self.reference not in self.levels:
            raise InputError(f"{self.name}: unknown reference level {self.reference!r}")
        if self.response_order and set(self.response_order) != set(self.levels):
            raise InputError(f"{self.name}: response_order must permute the levels")

    @property
    def non_reference(self) -> tuple:
        return tuple(l for l in self.levels if l != self.reference)

    def slab_kind(self, level: str) -> str:
        """Slab for the indicator of ``level``: truncated by its position in
        the response ordering relative to the reference, else Gaussian."""
        if not self.response_order:
            return GAUSSIAN
        rank = {l: i for i, l in enumerate(self.response_order)}
        return TRUNC_POS if rank[level] > rank[self.reference] else TRUNC_NEG

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "levels": list(self.levels),
            "prevalence": list(self.prevalence),
            "reference": self.reference,
            "response_order": list(self.response_order),
            "slab_sd": self.slab_sd,
            "q_char": self.q_char,
            "q_level": self.q_level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Characteristic":
        return cls(
            name=d["name"],
            levels=tuple(d["levels"]),
            prevalence=tuple(d["prevalence"]),
            reference=d["reference"],
            response_order=tuple(d.get("response_order", ())),
            slab_sd=d.get("slab_sd", 5.0),
            q_char=d.get("q_char", 0.5),
            q_level=d.get("q_level", 0.5),
        )


@dataclass(frozen=True)
class CovariateSchema:
    characteristics: tuple = field(default_factory=tuple)

    @property
    def n_indicators(self) -> int:
        return sum(len(c.levels) - 1 for c in self.characteristics)

    def indicator_names(self) -> list:
        return [f"{c.name}={l}" for c in self.characteristics for l in c.non_reference]

    def indicator_index(self) -> dict:
        return {name: i for i, name in enumerate(self.indicator_names())}

    def indicator_meta(self):
        """(characteristic index, characteristic, level name) per indicator."""
        out = []
        for h, c in enumerate(self.characteristics):
            for l in c.non_reference:
                out.append((h, c, l))
        return out

    def encode(self, pattern: dict) -> np.ndarray:
        """Dummy-code a mapping of characteristic name -> level name."""
        z = np.zeros(self.n_indicators, dtype=np.float64)
        for i, (h, c, level) in enumerate(self.indicator_meta()):
            value = pattern.get(c.name)
            if value is None or value not in c.levels:
                raise InputError(f"pattern missing or invalid for {c.name!r}: {value!r}")
            if value == level:
                z[i] = 1.0
        return z

    def without_characteristic(self, char_name: str) -> "CovariateSchema":
        """Drop a characteristic whose value became constant by exclusion."""
        chars = tuple(c for c in self.characteristics if c.name != char_name)
        if len(chars) == len(self.characteristics):
            raise InputError(f"unknown characteristic {char_name!r}")
        return CovariateSchema(characteristics=chars)

    def without_level(self, char_name: str, level: str) -> "CovariateSchema":
        """Drop one excluded (non-reference) level; drops the characteristic
        entirely when only the reference would remain."""
        chars = []
        for c in self.characteristics:
            if c.name != char_name:
                chars.append(c)
                continue
            if level == c.reference:
                raise InputError("cannot drop the reference level")
            keep = [l for l in c.levels if l != level]
            if len(keep) < 2:
                continue
            prev = [p for l, p in zip(c.levels, c.prevalence) if l != level]
            total = sum(prev)
            chars.append(
                replace(
                    c,
                    levels=tuple(keep),
                    prevalence=tuple(p / total for p in prev),
                    response_order=tuple(l for l in c.response_order if l != level),
                )
            )
        return CovariateSchema(characteristics=tuple(chars))

    def with_reference(self, char_name: str, new_reference: str) -> "CovariateSchema":
        """Same schema with one characteristic recoded to a new reference."""
        chars = []
        found = False
        for c in self.characteristics:
            if c.name == char_name:
                chars.append(replace(c, reference=new_reference))
                found = True
            else:
                chars.append(c)
        if not found:
            raise InputError(f"unknown characteristic {char_name!r}")
        return CovariateSchema(characteristics=tuple(chars))

    def to_dict(self) -> dict:
        return {"characteristics": [c.to_dict() for c in self.characteristics]}

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateSchema":
        return cls(tuple(Characteristic.from_dict(c) for c in d["characteristics"]))


def entrectinib_schema() -> CovariateSchema:
    """The four characteristics of the motivating trial population.

    Prevalences follow the observed distribution (prior TKI treatment 34%,
    female 48%, NTRK/ROS1/ALK 30/34/36%, fusion/amplification/other
    53/16/31%).  Response direction is taken as known for prior treatment
    (treated respond less) and alteration type (other < amplification <
    fusion); gender and gene location carry plain Gaussian slabs because the
    direction of the gender association is not reliable enough to constrain.
    """
    return CovariateSchema(
        characteristics=(
            Characteristic(
                name="prior_treatment",
                levels=("no", "yes"),
                prevalence=(0.66, 0.34),
                reference="no",
                response_order=("yes", "no"),
            ),
            Characteristic(
                name="gender",
                levels=("male", "female"),
                prevalence=(0.52, 0.48),
                reference="male",
            ),
            Characteristic(
                name="gene",
                levels=("ALK", "NTRK", "ROS1"),
                prevalence=(0.36, 0.30, 0.34),
                reference="ALK",
            ),
            Characteristic(
                name="alteration",
                levels=("other", "amplification", "fusion"),
                prevalence=(0.31, 0.16, 0.53),
                reference="other",
                response_order=("other", "amplification", "fusion"),
            ),
        )
    )
