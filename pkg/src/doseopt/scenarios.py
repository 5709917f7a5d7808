"""Generative truth for simulation studies.

A scenario fixes the exposure truth (lognormal clearance and an AUC limit),
an efficacy table of response probabilities per covariate pattern and dose,
and the true optimal dose per pattern (absent for futile patterns).  Dosages
are derived once from the canonical toxicity targets by inverting the probit
exposure-toxicity curve; scenario-specific toxicity curves come from
re-solving the AUC limit against the first level's target, which shifts the
whole curve on the probit scale exactly as the generating mechanism does.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.special import ndtr, ndtri

from doseopt.covariates import CovariateSchema, entrectinib_schema
from doseopt.grid import DEFAULT_SKELETON, DoseGrid, InputError


class ScenarioError(InputError):
    """Scenario definition does not cover a requested pattern."""


@dataclass(frozen=True)
class PkTruth:
    clearance_mean: float = 19.6  # L/h; exp of the mean log-clearance
    omega_cl: float = 0.308  # sd of log-clearance
    auc_limit: float = 46.31  # mg*h/L; toxicity occurs above this exposure

    def to_dict(self) -> dict:
        return {
            "clearance_mean": self.clearance_mean,
            "omega_cl": self.omega_cl,
            "auc_limit": self.auc_limit,
        }


def derive_dose_grid(targets, pk: PkTruth) -> tuple:
    """Dosages whose marginal toxicity probabilities hit the targets.

    Inverts P(dose/CL > limit) = Phi((log D - log CL - log limit)/omega).
    """
    targets = tuple(float(t) for t in targets)
    if not all(0.0 < t < 1.0 for t in targets):
        raise InputError("targets must lie in (0,1)")
    if not all(a < b for a, b in zip(targets, targets[1:])):
        raise InputError("targets must be strictly increasing")
    base = math.log(pk.clearance_mean) + math.log(pk.auc_limit)
    return tuple(float(math.exp(base + pk.omega_cl * ndtri(t))) for t in targets)


def toxicity_probability(dosage, pk: PkTruth, auc_limit: float | None = None):
    """Marginal toxicity probability at given dosages under the exposure truth."""
    limit = pk.auc_limit if auc_limit is None else auc_limit
    d = np.asarray(dosage, dtype=float)
    return ndtr((np.log(d) - math.log(pk.clearance_mean) - math.log(limit)) / pk.omega_cl)


@dataclass(frozen=True)
class EfficacyRule:
    match: dict  # characteristic name -> required level; empty matches all
    probs: tuple  # response probability per dose level
    obd: int | None  # true optimal level, None marks a futile pattern

    def matches(self, pattern: dict) -> bool:
        return all(pattern.get(k) == v for k, v in self.match.items())


@dataclass(frozen=True)
class Scenario:
    name: str
    toxicity_targets: tuple  # per-level marginal toxicity this scenario generates
    rules: tuple  # first matching rule wins; must end with a catch-all
    schema: CovariateSchema = field(default_factory=entrectinib_schema)
    pk: PkTruth = field(default_factory=PkTruth)
    grid_targets: tuple = DEFAULT_SKELETON  # targets the dosages were derived from
    accrual_rate: float = 0.5  # patients per week
    description: str = ""

    def __post_init__(self):
        if not self.rules or self.rules[-1].match:
            raise InputError(f"{self.name}: rules must end with a catch-all")
        for rule in self.rules:
            if len(rule.probs) != len(self.grid_targets):
                raise InputError(f"{self.name}: rule probability length mismatch")
            if not all(0.0 <= p <= 1.0 for p in rule.probs):
                raise InputError(f"{self.name}: probabilities outside [0,1]")

    @property
    def dosage(self) -> tuple:
        return derive_dose_grid(self.grid_targets, self.pk)

    @property
    def auc_limit(self) -> float:
        """Exposure limit that reproduces this scenario's level-1 target."""
        d1 = self.dosage[0]
        t1 = self.toxicity_targets[0]
        return float(d1 / math.exp(math.log(self.pk.clearance_mean) + self.pk.omega_cl * ndtri(t1)))

    @property
    def true_toxicity(self) -> tuple:
        """Exact marginal toxicity per level implied by the shifted limit."""
        return tuple(float(x) for x in toxicity_probability(self.dosage, self.pk, self.auc_limit))

    def design_grid(self) -> DoseGrid:
        return DoseGrid(dosage=self.dosage, skeleton=DEFAULT_SKELETON)

    def rule_for(self, pattern: dict) -> EfficacyRule:
        for rule in self.rules:
            if rule.matches(pattern):
                return rule
        raise ScenarioError(f"{self.name}: no rule covers pattern {pattern}")

    def efficacy(self, pattern: dict, dose_index: int) -> float:
        return float(self.rule_for(pattern).probs[dose_index - 1])

    def true_obd(self, pattern: dict) -> int | None:
        return self.rule_for(pattern).obd

    def in_target_population(self, pattern: dict) -> bool:
        return self.true_obd(pattern) is not None

    def all_patterns(self):
        """(pattern dict, prevalence) over the full cross of characteristics."""
        chars = self.schema.characteristics
        for combo in itertools.product(*[c.levels for c in chars]):
            prev = 1.0
            pattern = {}
            for c, level in zip(chars, combo):
                pattern[c.name] = level
                prev *= c.prevalence[c.levels.index(level)]
            yield pattern, prev

    def true_subgroups(self) -> dict:
        """Target-population subgroups keyed by their true optimal level."""
        groups: dict = {}
        for pattern, prev in self.all_patterns():
            obd = self.true_obd(pattern)
            if obd is None:
                continue
            groups.setdefault(obd, []).append((pattern, prev))
        return dict(sorted(groups.items()))

    def influential_indicators(self) -> set:
        """Indicator names whose value changes the true OBD inside the target
        population; everything else counts toward the false-positive rate."""
        out = set()
        for h, c, level in self.schema.indicator_meta():
            for pattern, _ in self.all_patterns():
                if pattern[c.name] != c.reference:
                    continue
                flipped = dict(pattern)
                flipped[c.name] = level
                a, b = self.true_obd(pattern), self.true_obd(flipped)
                if a is not None and b is not None and a != b:
                    out.add(f"{c.name}={level}")
                    break
        return out

    def true_mtd(self, p_target: float = 0.25) -> int:
        from doseopt.grid import closest_level

        return closest_level(self.true_toxicity, p_target)

    def target_constraints(self):
        """The true target population as per-characteristic constraints, when
        it factors into a product over characteristics (all built-in
        scenarios do); None otherwise."""
        keep: dict = {}
        for c in self.schema.characteristics:
            keep[c.name] = {
                level
                for level in c.levels
                if any(
                    self.in_target_population(dict(p, **{c.name: level}))
                    for p, _ in self.all_patterns()
                )
            }
        for pattern, _ in self.all_patterns():
            product_member = all(pattern[k] in v for k, v in keep.items())
            if product_member != self.in_target_population(pattern):
                return None
        out = []
        for c in self.schema.characteristics:
            kept = keep[c.name]
            if len(kept) == len(c.levels):
                continue
            if len(kept) == 1:
                out.append({"characteristic": c.name, "level": next(iter(kept)), "op": "eq"})
            else:
                for level in c.levels:
                    if level not in kept:
                        out.append({"characteristic": c.name, "level": level, "op": "ne"})
        return out

    def with_reference(self, char_name: str, new_reference: str) -> "Scenario":
        """Sensitivity variant: recode one characteristic's reference level.

        Scenario truth (rules, prevalences as level values) is unchanged."""
        return Scenario(
            name=f"{self.name}_ref_{char_name}_{new_reference}",
            toxicity_targets=self.toxicity_targets,
            rules=self.rules,
            schema=self.schema.with_reference(char_name, new_reference),
            pk=self.pk,
            grid_targets=self.grid_targets,
            accrual_rate=self.accrual_rate,
            description=self.description,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "toxicity_targets": list(self.toxicity_targets),
            "grid_targets": list(self.grid_targets),
            "accrual_rate": self.accrual_rate,
            "pk": self.pk.to_dict(),
            "schema": self.schema.to_dict(),
            "rules": [
                {"match": r.match, "probs": list(r.probs), "obd": r.obd} for r in self.rules
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            name=d["name"],
            description=d.get("description", ""),
            toxicity_targets=tuple(d["toxicity_targets"]),
            grid_targets=tuple(d.get("grid_targets", DEFAULT_SKELETON)),
            accrual_rate=d.get("accrual_rate", 0.5),
            pk=PkTruth(**d.get("pk", {})),
            schema=CovariateSchema.from_dict(d["schema"]) if "schema" in d else entrectinib_schema(),
            rules=tuple(
                EfficacyRule(match=r["match"], probs=tuple(r["probs"]), obd=r["obd"])
                for r in d["rules"]
            ),
        )


def _gene_rules(curves: dict, extra_match: dict | None = None, obds: dict | None = None):
    rules = []
    for gene in ("NTRK", "ROS1", "ALK"):
        match = {"gene": gene, "alteration": "fusion"}
        if extra_match:
            match.update(extra_match)
        rules.append(EfficacyRule(match=match, probs=curves[gene], obd=obds[gene]))
    rules.append(EfficacyRule(match={}, probs=(0.05, 0.05, 0.05, 0.05), obd=None))
    return tuple(rules)


CANONICAL = (0.05, 0.12, 0.25, 0.38)


def builtin_scenarios() -> dict:
    """The eight simulation-study scenarios."""
    s: dict = {}
    fusion_curves = {
        "NTRK": (0.50, 0.70, 0.95, 0.95),
        "ROS1": (0.25, 0.55, 0.86, 0.86),
        "ALK": (0.10, 0.35, 0.57, 0.57),
    }
    s["scenario1"] = Scenario(
        name="scenario1",
        description="one futile alteration subgroup, common OBD at level 3",
        toxicity_targets=CANONICAL,
        rules=_gene_rules(fusion_curves, obds={"NTRK": 3, "ROS1": 3, "ALK": 3}),
    )
    s["scenario2"] = Scenario(
        name="scenario2",
        description="target population needs gene fusion and no prior treatment",
        toxicity_targets=CANONICAL,
        rules=_gene_rules(
            fusion_curves, extra_match={"prior_treatment": "no"}, obds={"NTRK": 3, "ROS1": 3, "ALK": 3}
        ),
    )
    s["scenario3"] = Scenario(
        name="scenario3",
        description="homogeneous plateau at level 2, all doses safe",
        toxicity_targets=(0.02, 0.06, 0.14, 0.24),
        rules=(EfficacyRule(match={}, probs=(0.5, 0.7, 0.7, 0.7), obd=2),),
    )
    s["scenario4"] = Scenario(
        name="scenario4",
        description="homogeneous increasing profile, OBD at level 3",
        toxicity_targets=CANONICAL,
        rules=(EfficacyRule(match={}, probs=(0.25, 0.5, 0.7, 0.7), obd=3),),
    )
    s["scenario5"] = Scenario(
        name="scenario5",
        description="NTRK fusions plateau at level 1, ROS1/ALK at level 3",
        toxicity_targets=CANONICAL,
        rules=_gene_rules(
            {
                "NTRK": (0.95, 0.95, 0.95, 0.95),
                "ROS1": (0.25, 0.55, 0.86, 0.86),
                "ALK": (0.10, 0.35, 0.57, 0.57),
            },
            obds={"NTRK": 1, "ROS1": 3, "ALK": 3},
        ),
    )
    s["scenario6"] = Scenario(
        name="scenario6",
        description="three gene-specific OBDs one level apart",
        toxicity_targets=CANONICAL,
        rules=_gene_rules(
            {
                "NTRK": (0.95, 0.95, 0.95, 0.95),
                "ROS1": (0.55, 0.86, 0.86, 0.86),
                "ALK": (0.20, 0.35, 0.57, 0.57),
            },
            obds={"NTRK": 1, "ROS1": 2, "ALK": 3},
        ),
    )
    s["scenario7"] = Scenario(
        name="scenario7",
        description="gender-specific OBDs two levels apart, all doses safe",
        toxicity_targets=(0.02, 0.06, 0.14, 0.24),
        rules=(
            EfficacyRule(match={"gender": "male"}, probs=(0.15, 0.25, 0.35, 0.6), obd=4),
            EfficacyRule(match={"gender": "female"}, probs=(0.55, 0.8, 0.8, 0.8), obd=2),
            EfficacyRule(match={}, probs=(0.0, 0.0, 0.0, 0.0), obd=None),
        ),
    )
    s["scenario8"] = Scenario(
        name="scenario8",
        description="gender-specific OBDs one level apart, two safe doses",
        toxicity_targets=(0.12, 0.23, 0.41, 0.56),
        rules=(
            EfficacyRule(match={"gender": "male"}, probs=(0.35, 0.6, 0.6, 0.6), obd=2),
            EfficacyRule(match={"gender": "female"}, probs=(0.7, 0.7, 0.7, 0.7), obd=1),
            EfficacyRule(match={}, probs=(0.0, 0.0, 0.0, 0.0), obd=None),
        ),
    )
    return s


def load_scenario(spec: str) -> Scenario:
    """A scenario by packaged name (e.g. ``scenario3``) or filesystem path."""
    pkg_files = resources.files("doseopt") / "scenarios" / f"{spec}.json"
    if pkg_files.is_file():
        return Scenario.from_dict(json.loads(pkg_files.read_text()))
    builtins = builtin_scenarios()
    if spec in builtins:
        return builtins[spec]
    try:
        with open(spec) as fh:
            return Scenario.from_dict(json.load(fh))
    except FileNotFoundError:
        raise InputError(f"unknown scenario {spec!r}; built-ins: {sorted(builtins)}")


def export_builtin_scenarios(directory) -> list:
    """Write the built-in scenarios as editable JSON documents."""
    import pathlib

    out = []
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, scen in builtin_scenarios().items():
        path = directory / f"{name}.json"
        path.write_text(json.dumps(scen.to_dict(), indent=2, sort_keys=True) + "\n")
        out.append(path)
    return out
