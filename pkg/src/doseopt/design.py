"""Trial state machine for the two-stage dose-optimization design.

Stage 1 escalates by the weighted CRM, then (once all stage-1 toxicity
windows close) estimates the toxicity MTD, shrinks the acceptable set with
the exposure model, updates the scaled doses to the posterior toxicity
probabilities, and runs the first futility assessment.  Stage 2 assigns each
patient from a fresh efficacy fit, randomizing proportionally to estimated
efficacy over the admissible set for the first block and then homing in on
the lowest near-optimal dose, with a second futility assessment between the
two phases.  The final analysis refits toxicity with the stage-1 posterior
probabilities as skeleton, refits efficacy on the fully observed data, and
reports a subgroup-specific optimal dose per selected covariate pattern.

The engine is deterministic given (config, seed): every random draw comes
from a counter-keyed stream, so a reloaded trial replays identically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from doseopt import rng as rngmod
from doseopt.covariates import CovariateSchema
from doseopt.efficacy import (
    ConditioningError,
    EffObservation,
    EffPosterior,
    SamplerConfig,
    eff_draws_conditional,
    eff_prob,
    fit_eff_posterior,
    select_covariates,
)
from doseopt.grid import DoseGrid, InputError
from doseopt.pk import PkObservation, PkPrior, adjust_mtd, fit_pk_posterior, mtd_pk
from doseopt.toxicity import (
    DEFAULT_PRIOR_SD,
    ToxObservation,
    acceptable_set,
    fit_tox_posterior,
    next_dose_tox,
    tox_curve_quantiles,
)

STAGE_ESCALATION = "Escalation"
STAGE_PK_ADJUST = "PkAdjust"
STAGE_FUTILITY1 = "Futility1"
STAGE_AR = "AdaptiveRandomization"
STAGE_FUTILITY2 = "Futility2"
STAGE_OPTIMIZATION = "Optimization"
STAGE_FINAL = "FinalAnalysis"
STAGE_TERMINATED = "TerminatedFutile"
STAGE_COMPLETE = "Complete"

STAGE_ORDER = (
    STAGE_ESCALATION,
    STAGE_PK_ADJUST,
    STAGE_FUTILITY1,
    STAGE_AR,
    STAGE_FUTILITY2,
    STAGE_OPTIMIZATION,
    STAGE_FINAL,
)


class TrialConductError(RuntimeError):
    """Base for enrollment/recording contract violations."""


class ExcludedSubgroupError(TrialConductError):
    def __init__(self, message, assessment_id=None):
        super().__init__(message)
        self.assessment_id = assessment_id


class StageError(TrialConductError):
    pass


class UnknownPatientError(TrialConductError):
    pass


class DuplicateOutcomeError(TrialConductError):
    pass


@dataclass(frozen=True)
class DesignConfig:
    n1: int = 24
    n2: int = 36
    r: float = 0.5
    p_target: float = 0.25
    psi_select: float = 0.50  # inclusion threshold for dose assignment / final model
    psi_futility: float = 0.65  # inclusion threshold to open a futility assessment
    psi_obd: float = 0.35  # posterior threshold in the optimal-dose criterion
    eff_cutoff: float = 0.40  # clinically meaningful response rate
    futility_level: float = 0.05  # Bayesian threshold in the futility criterion
    final_futility_level: float = 0.01  # stricter at the final analysis: data are complete
    admissible_floor: float = 0.20  # minimum estimated efficacy to stay admissible
    min_treated: int = 3  # doses with fewer patients are never dropped
    obd_fraction: float = 0.85  # fraction of the maximum efficacy to reach
    alpha_base: float = 0.40  # optimization closeness threshold at stage entry
    alpha_decay: float = 0.5  # and its linear decay over the dose-ranging stage
    futility_min_a1: int = 6  # subgroup minimum treated at the adjusted MTD
    futility_min_a2: int = 10  # subgroup minimum across acceptable doses
    tox_window: float = 4.0  # weeks
    eff_window: float = 8.0  # weeks
    tox_prior_sd: float = DEFAULT_PRIOR_SD
    pk_threshold: float = 46.31  # exposure limit on the AUC scale
    pk_prior_clearance: float = 19.6  # L/h, centers the exposure-model intercept prior
    pk_enabled: bool = True
    heterogeneity_enabled: bool = True
    full_observation_stage1: bool = False  # escalate on complete data instead of weights
    cohort_size: int = 1
    mcmc: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.n1 <= 0 or self.n2 <= 0:
            raise InputError("n1 and n2 must be positive")
        if not 0.0 < self.r < 1.0:
            raise InputError("r must lie in (0,1)")
        for name in (
            "p_target", "psi_select", "psi_futility", "psi_obd", "eff_cutoff",
            "futility_level", "final_futility_level", "admissible_floor", "obd_fraction",
        ):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InputError(f"{name} must lie in (0,1)")

    @property
    def n_max(self) -> int:
        return self.n1 + self.n2

    @property
    def n_randomized(self) -> int:
        return int(round(self.r * self.n2))

    def alpha_threshold(self, n_in_stage: int) -> float:
        """Optimization closeness threshold after n dose-ranging patients."""
        return self.alpha_base * (1.0 - self.alpha_decay * n_in_stage / self.n2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mcmc"] = asdict(self.mcmc)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DesignConfig":
        d = dict(d)
        d["mcmc"] = SamplerConfig(**d.get("mcmc", {}))
        return cls(**d)


@dataclass
class PatientRecord:
    pid: int
    arrival: float  # trial clock, weeks
    pattern: dict  # characteristic name -> level name
    dose: int
    stage: str
    y_tox: int | None = None
    tox_time: float | None = None  # weeks after arrival, only for events
    y_eff: int | None = None
    eff_time: float | None = None
    auc: float | None = None

    def observed_tox(self, t: float, window: float):
        return _observed(self.y_tox, self.tox_time, self.arrival, t, window)

    def observed_eff(self, t: float, window: float):
        return _observed(self.y_eff, self.eff_time, self.arrival, t, window)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PatientRecord":
        return cls(**d)


def _observed(y, event_time, arrival, t, window):
    """(status, weight) of a binary endpoint at trial time t."""
    follow = max(t - arrival, 0.0)
    if y == 1 and event_time is not None and arrival + event_time <= t:
        return 1, 1.0
    return 0, min(follow / window, 1.0)


@dataclass
class FutilityOutcome:
    assessment_id: int
    influential: str | None = None  # indicator name
    eliminated: dict | None = None  # {"characteristic", "level", "op"}
    trial_stop: bool = False
    sides: list = field(default_factory=list)  # per-side diagnostics

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_eff_curve(post: EffPosterior, selected, z_active, levels) -> np.ndarray:
    """Posterior-mean efficacy per level for one indicator vector, with the
    coefficients of unselected covariates zeroed out in every draw."""
    gamma = post.gamma
    if selected != set(range(gamma.shape[1])):
        gamma = np.zeros_like(post.gamma)
        for m in sorted(selected):
            gamma[:, m] = post.gamma[:, m]
    return np.array(
        [
            float(np.mean(eff_prob(post.alpha0, post.alpha1, gamma, float(post.scaled_doses[j - 1]), z_active)))
            for j in levels
        ]
    )


def admissible_levels(curve, accept_levels, treated_counts, floor, min_treated) -> list:
    """Acceptable levels kept when estimated efficacy clears the floor or the
    dose is still under-explored."""
    out = []
    for j, est in zip(accept_levels, curve):
        if est >= floor or treated_counts.get(j, 0) < min_treated:
            out.append(j)
    return out


def randomize_dose(levels, efficacies, rng) -> int:
    """Sample a level with probability proportional to estimated efficacy;
    all-zero estimates fall back to a uniform draw."""
    if not levels:
        raise InputError("no admissible levels to randomize over")
    probs = np.asarray(efficacies, dtype=float)
    if np.any(probs < 0):
        raise InputError("negative efficacy estimate")
    total = probs.sum()
    if total <= 0:
        probs = np.full(len(levels), 1.0 / len(levels))
    else:
        probs = probs / total
    return int(np.asarray(levels)[rng.choice(len(levels), p=probs)])


def optimization_dose(levels, efficacies, alpha: float) -> int:
    """Minimum admissible level within alpha of the best estimated efficacy."""
    if not levels:
        raise InputError("no admissible levels to optimize over")
    best = max(efficacies)
    for j, est in zip(levels, efficacies):
        if abs(est - best) < alpha:
            return j
    return levels[-1]


@dataclass
class TrialState:
    config: DesignConfig
    grid: DoseGrid
    schema: CovariateSchema
    seed: int
    stage: str = STAGE_ESCALATION
    patients: list = field(default_factory=list)
    exclusions: list = field(default_factory=list)
    futility_log: list = field(default_factory=list)
    p_tilde: list | None = None
    a_hat_stage1: float | None = None
    mtd_tox: int | None = None
    mtd_pk: int | None = None
    mtd_star: int | None = None
    acceptable: list = field(default_factory=list)
    acceptable_tox_only: list = field(default_factory=list)
    stage1_time: float | None = None
    fit_counter: int = 0
    futility2_done: bool = False
    flags: list = field(default_factory=list)
    report: dict | None = None

    VERSION = 1

    def to_dict(self) -> dict:
        return {
            "version": self.VERSION,
            "config": self.config.to_dict(),
            "grid": self.grid.to_dict(),
            "schema": self.schema.to_dict(),
            "seed": self.seed,
            "stage": self.stage,
            "patients": [p.to_dict() for p in self.patients],
            "exclusions": list(self.exclusions),
            "futility_log": list(self.futility_log),
            "p_tilde": self.p_tilde,
            "a_hat_stage1": self.a_hat_stage1,
            "mtd_tox": self.mtd_tox,
            "mtd_pk": self.mtd_pk,
            "mtd_star": self.mtd_star,
            "acceptable": list(self.acceptable),
            "acceptable_tox_only": list(self.acceptable_tox_only),
            "stage1_time": self.stage1_time,
            "fit_counter": self.fit_counter,
            "futility2_done": self.futility2_done,
            "flags": list(self.flags),
            "report": self.report,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialState":
        if d.get("version") != cls.VERSION:
            raise InputError(f"unsupported trial state version {d.get('version')!r}")
        return cls(
            config=DesignConfig.from_dict(d["config"]),
            grid=DoseGrid.from_dict(d["grid"]),
            schema=CovariateSchema.from_dict(d["schema"]),
            seed=d["seed"],
            stage=d["stage"],
            patients=[PatientRecord.from_dict(p) for p in d["patients"]],
            exclusions=list(d["exclusions"]),
            futility_log=list(d["futility_log"]),
            p_tilde=d["p_tilde"],
            a_hat_stage1=d["a_hat_stage1"],
            mtd_tox=d["mtd_tox"],
            mtd_pk=d["mtd_pk"],
            mtd_star=d["mtd_star"],
            acceptable=list(d["acceptable"]),
            acceptable_tox_only=list(d["acceptable_tox_only"]),
            stage1_time=d["stage1_time"],
            fit_counter=d["fit_counter"],
            futility2_done=d["futility2_done"],
            flags=list(d["flags"]),
            report=d["report"],
        )


class TrialEngine:
    """Single-writer wrapper around a TrialState."""

    def __init__(self, state: TrialState):
        self.state = state

    @classmethod
    def new(cls, config: DesignConfig, grid: DoseGrid, schema: CovariateSchema, seed: int) -> "TrialEngine":
        if not config.heterogeneity_enabled:
            schema = CovariateSchema(())
        return cls(TrialState(config=config, grid=grid, schema=schema, seed=seed))

    # ---- population bookkeeping ----

    def pattern_excluded(self, pattern: dict):
        """The exclusion record barring this pattern, if any."""
        for exc in self.state.exclusions:
            value = pattern.get(exc["characteristic"])
            if exc["op"] == "eq" and value != exc["level"]:
                return exc
            if exc["op"] == "ne" and value == exc["level"]:
                return exc
        return None

    def active_schema(self) -> CovariateSchema:
        """Original schema minus characteristics/levels pinned by exclusions."""
        schema = self.state.schema
        for exc in self.state.exclusions:
            names = {c.name for c in schema.characteristics}
            if exc["characteristic"] not in names:
                continue
            if exc["op"] == "eq":
                schema = schema.without_characteristic(exc["characteristic"])
            else:
                schema = schema.without_level(exc["characteristic"], exc["level"])
        return schema

    def _eligible_patients(self) -> list:
        return [p for p in self.state.patients if self.pattern_excluded(p.pattern) is None]

    def _stage2_count(self) -> int:
        return max(len(self.state.patients) - self.state.config.n1, 0)

    # ---- data assembly ----

    def _tox_data(self, t: float, full: bool = False) -> list:
        cfg = self.state.config
        out = []
        for p in self.state.patients:
            if full:
                y, w = (int(p.y_tox or 0), 1.0)
                out.append(ToxObservation(p.dose, y, cfg.tox_window, cfg.tox_window))
            else:
                y, w = p.observed_tox(t, cfg.tox_window)
                out.append(ToxObservation(p.dose, y, w * cfg.tox_window, cfg.tox_window))
        return out

    def _eff_data(self, t: float, schema: CovariateSchema, full: bool = False) -> list:
        cfg = self.state.config
        out = []
        for p in self._eligible_patients():
            z = schema.encode(p.pattern)
            if full:
                y, w = (int(p.y_eff or 0), 1.0)
            else:
                y, w = p.observed_eff(t, cfg.eff_window)
            out.append(EffObservation(p.dose, z, y, w * cfg.eff_window, cfg.eff_window))
        return out

    def _fit_eff(self, t: float, schema: CovariateSchema, scaled, full: bool = False) -> EffPosterior:
        st = self.state
        data = self._eff_data(t, schema, full=full)
        mcmc = replace(st.config.mcmc, seed=rngmod.derive_seed(st.seed, "eff", st.fit_counter))
        st.fit_counter += 1
        return fit_eff_posterior(data, schema, scaled, mcmc)

    def _treated_counts(self) -> dict:
        counts: dict = {}
        for p in self._eligible_patients():
            counts[p.dose] = counts.get(p.dose, 0) + 1
        return counts

    # ---- enrollment ----

    def enroll(self, pattern: dict, at: float) -> dict:
        st = self.state
        cfg = st.config
        if st.stage in (STAGE_TERMINATED, STAGE_COMPLETE, STAGE_FINAL):
            raise StageError(f"trial is in stage {st.stage}; enrollment closed")
        if st.stage in (STAGE_PK_ADJUST, STAGE_FUTILITY1):
            raise StageError("stage-1 analysis pending; record outstanding outcomes first")
        if st.patients and at < st.patients[-1].arrival:
            raise InputError("arrival time precedes the previous enrollment")
        exc = self.pattern_excluded(pattern)
        if exc is not None:
            raise ExcludedSubgroupError(
                f"subgroup {exc['characteristic']}={pattern.get(exc['characteristic'])} "
                f"was closed at futility assessment {exc['assessment']}",
                assessment_id=exc["assessment"],
            )
        # schema validation: encoding raises on unknown level names
        st.schema.encode(pattern) if st.schema.characteristics else None

        if st.stage == STAGE_ESCALATION:
            dose, rationale = self._escalation_dose(at)
        else:
            if (
                st.stage == STAGE_AR
                and not st.futility2_done
                and self._stage2_count() >= cfg.n_randomized
            ):
                st.stage = STAGE_FUTILITY2
                self._run_futility(2, at)
                st.futility2_done = True
                if st.stage == STAGE_TERMINATED:
                    raise StageError("trial terminated for futility at assessment 2")
                st.stage = STAGE_OPTIMIZATION
                exc = self.pattern_excluded(pattern)
                if exc is not None:
                    raise ExcludedSubgroupError(
                        f"subgroup {exc['characteristic']}={pattern.get(exc['characteristic'])} "
                        f"was closed at futility assessment {exc['assessment']}",
                        assessment_id=exc["assessment"],
                    )
            dose, rationale = self._dose_ranging_dose(pattern, at)

        pid = len(st.patients)
        st.patients.append(
            PatientRecord(pid=pid, arrival=float(at), pattern=dict(pattern), dose=dose, stage=st.stage)
        )
        return {"patient_id": pid, "dose": dose, "stage": st.stage, "rationale": rationale}

    def _escalation_dose(self, at: float):
        st = self.state
        cfg = st.config
        if not st.patients:
            return 1, "starting dose"
        data = self._tox_data(at, full=cfg.full_observation_stage1)
        post = fit_tox_posterior(data, st.grid, cfg.tox_prior_sd)
        highest = max(p.dose for p in st.patients)
        dose = next_dose_tox(post, cfg.p_target, highest)
        return dose, f"CRM estimate closest to target {cfg.p_target}"

    def _dose_ranging_dose(self, pattern: dict, at: float):
        st = self.state
        cfg = st.config
        schema = self.active_schema()
        post = self._fit_eff(at, schema, st.p_tilde)
        selected = select_covariates(post, cfg.psi_select)
        z = schema.encode(pattern)
        curve = estimate_eff_curve(post, selected, z, st.acceptable)
        admissible = admissible_levels(
            curve, st.acceptable, self._treated_counts(), cfg.admissible_floor, cfg.min_treated
        )
        if not admissible:
            st.flags.append(f"empty admissible set at patient {len(st.patients)}")
            return st.acceptable[0], "no admissible dose; assigned lowest acceptable"
        eff = [float(curve[st.acceptable.index(j)]) for j in admissible]
        if st.stage == STAGE_AR:
            gen = rngmod.stream(st.seed, "ar", len(st.patients))
            dose = randomize_dose(admissible, eff, gen)
            return dose, "adaptive randomization proportional to estimated efficacy"
        alpha = cfg.alpha_threshold(self._stage2_count())
        dose = optimization_dose(admissible, eff, alpha)
        return dose, f"lowest dose within {alpha:.3f} of the best estimated efficacy"

    # ---- outcome recording ----

    def record_outcome(self, pid: int, outcome: dict) -> dict:
        st = self.state
        cfg = st.config
        if not 0 <= pid < len(st.patients):
            raise UnknownPatientError(f"no patient {pid}")
        rec = st.patients[pid]
        if "tox" in outcome:
            if rec.y_tox is not None:
                raise DuplicateOutcomeError(f"toxicity already recorded for patient {pid}")
            y = int(outcome["tox"])
            t = outcome.get("tox_time")
            if y == 1:
                if t is None or not 0.0 <= float(t) <= cfg.tox_window:
                    raise InputError("toxicity event time must lie within the observation window")
                rec.tox_time = float(t)
            elif t is not None:
                raise InputError("event time given for a non-event")
            rec.y_tox = y
        if "eff" in outcome:
            if rec.y_eff is not None:
                raise DuplicateOutcomeError(f"response already recorded for patient {pid}")
            y = int(outcome["eff"])
            t = outcome.get("eff_time")
            if y == 1:
                if t is None or not 0.0 <= float(t) <= cfg.eff_window:
                    raise InputError("response event time must lie within the observation window")
                rec.eff_time = float(t)
            elif t is not None:
                raise InputError("event time given for a non-event")
            rec.y_eff = y
        if outcome.get("auc") is not None:
            if rec.auc is not None:
                raise DuplicateOutcomeError(f"AUC already recorded for patient {pid}")
            rec.auc = float(outcome["auc"])

        info: dict = {"stage": st.stage}
        if self._stage1_analysis_due():
            self._run_stage1_analysis()
            info = {
                "stage": st.stage,
                "mtd_tox": st.mtd_tox,
                "mtd_pk": st.mtd_pk,
                "mtd_star": st.mtd_star,
                "acceptable": list(st.acceptable),
            }
        if self._final_analysis_due():
            self._run_final_analysis()
            info = {"stage": st.stage, "report": st.report}
        return info

    def _stage1_analysis_due(self) -> bool:
        st = self.state
        if st.stage != STAGE_ESCALATION or len(st.patients) < st.config.n1:
            return False
        stage1 = st.patients[: st.config.n1]
        if any(p.y_tox is None for p in stage1):
            return False
        if st.config.pk_enabled and any(p.auc is None for p in stage1):
            return False
        return True

    def _final_analysis_due(self) -> bool:
        st = self.state
        if st.stage not in (STAGE_AR, STAGE_OPTIMIZATION) or len(st.patients) < st.config.n_max:
            return False
        return all(p.y_tox is not None and p.y_eff is not None for p in st.patients)

    # ---- analyses ----

    def _run_stage1_analysis(self):
        st = self.state
        cfg = st.config
        st.stage = STAGE_PK_ADJUST
        # the stage closes when the last toxicity window does; the first
        # futility check therefore sees partially observed responses
        st.stage1_time = max(p.arrival + cfg.tox_window for p in st.patients)
        post = fit_tox_posterior(self._tox_data(st.stage1_time, full=True), st.grid, cfg.tox_prior_sd)
        st.a_hat_stage1 = post.post_mean_a
        st.p_tilde = list(post.post_probs)
        highest = max(p.dose for p in st.patients)
        st.mtd_tox = next_dose_tox(post, cfg.p_target, highest)
        st.acceptable_tox_only = acceptable_set(st.mtd_tox, st.grid)
        if cfg.pk_enabled:
            pk_data = [PkObservation(p.dose, p.auc) for p in st.patients]
            prior = PkPrior(m=(-math.log(cfg.pk_prior_clearance), 1.0))
            pk_post = fit_pk_posterior(
                pk_data, st.grid, prior, seed=rngmod.derive_seed(st.seed, "pk")
            )
            st.mtd_pk = mtd_pk(pk_post, st.grid, cfg.pk_threshold, cfg.p_target)
            st.mtd_star = adjust_mtd(st.mtd_tox, st.mtd_pk)
        else:
            st.mtd_star = st.mtd_tox
        st.acceptable = acceptable_set(st.mtd_star, st.grid)
        st.stage = STAGE_FUTILITY1
        if cfg.heterogeneity_enabled:
            self._run_futility(1, st.stage1_time)
        if st.stage != STAGE_TERMINATED:
            st.stage = STAGE_AR

    def _run_futility(self, assessment_id: int, t: float):
        st = self.state
        cfg = st.config
        schema = self.active_schema()
        outcome = FutilityOutcome(assessment_id=assessment_id)
        if not cfg.heterogeneity_enabled or schema.n_indicators == 0:
            st.futility_log.append(outcome.to_dict())
            return
        post = self._fit_eff(t, schema, st.p_tilde)
        probs = post.inclusion_probs
        over = np.flatnonzero(probs > cfg.psi_futility)
        if len(over) == 0:
            st.futility_log.append(outcome.to_dict())
            return
        m_star = int(over[np.argmax(probs[over])])
        meta = schema.indicator_meta()
        h_star, char, level = meta[m_star]
        outcome.influential = f"{char.name}={level}"

        min_n = cfg.futility_min_a1 if assessment_id == 1 else cfg.futility_min_a2
        # the first assessment gates on total experience at the adjusted MTD;
        # the second requires the subgroup itself to be represented across
        # the acceptable doses
        n_at_mtd = sum(1 for p in self._eligible_patients() if p.dose == st.mtd_star)
        futile_sides = []
        for side in (1, 0):
            members = [
                p
                for p in self._eligible_patients()
                if (p.pattern[char.name] == level) == bool(side)
            ]
            # the side's response is its predicted rate over the observed
            # covariate mix, not the all-reference pattern, so other model
            # effects cannot masquerade as futility of this subgroup
            if members:
                acc = None
                for p in members:
                    d = eff_draws_conditional(post, schema.encode(p.pattern), st.mtd_star, (m_star,))
                    acc = d if acc is None else acc + d
                draws = acc / len(members)
            else:
                z = np.zeros(schema.n_indicators)
                z[m_star] = float(side)
                draws = eff_draws_conditional(post, z, st.mtd_star, (m_star,))
            prob_eff = float(np.mean(draws > cfg.eff_cutoff))
            if assessment_id == 1:
                count = n_at_mtd
            else:
                count = sum(1 for p in members if p.dose in st.acceptable)
            is_futile = prob_eff < cfg.futility_level
            enough = count >= min_n
            outcome.sides.append(
                {"side": side, "prob_eff": prob_eff, "n": count, "futile": is_futile, "enough": enough}
            )
            if is_futile and enough:
                futile_sides.append(side)

        if len(futile_sides) == 2:
            outcome.trial_stop = True
            st.stage = STAGE_TERMINATED
        elif len(futile_sides) == 1:
            side = futile_sides[0]
            # dropping side 1 bars the level; dropping side 0 pins to the level
            op = "ne" if side == 1 else "eq"
            exc = {
                "characteristic": char.name,
                "level": level,
                "op": op,
                "assessment": assessment_id,
            }
            st.exclusions.append(exc)
            outcome.eliminated = exc
        st.futility_log.append(outcome.to_dict())

    def _run_final_analysis(self):
        st = self.state
        cfg = st.config
        st.stage = STAGE_FINAL
        t_end = max(p.arrival + max(cfg.tox_window, cfg.eff_window) for p in st.patients)

        # toxicity refit with the stage-1 posterior probabilities as skeleton;
        # the efficacy model keeps the stage-2 dose scale
        final_grid = DoseGrid(dosage=st.grid.dosage, skeleton=tuple(st.p_tilde))
        post_tox = fit_tox_posterior(self._tox_data(t_end, full=True), final_grid, cfg.tox_prior_sd)
        highest = max(p.dose for p in st.patients)
        mtd_final = next_dose_tox(post_tox, cfg.p_target, highest)
        accept_final = acceptable_set(mtd_final, st.grid)
        scaled_final = list(st.p_tilde)

        schema = self.active_schema()
        post_eff = self._fit_eff(t_end, schema, scaled_final, full=True)
        selected = select_covariates(post_eff, cfg.psi_select) if schema.n_indicators else set()
        meta = schema.indicator_meta()
        selected_names = [f"{meta[m][1].name}={meta[m][2]}" for m in sorted(selected)]
        patterns = _selected_patterns(schema, selected)

        results = []
        for pat in patterns:
            z = np.zeros(schema.n_indicators)
            for m in pat:
                z[m] = 1.0
            fallback = False
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    draws = {
                        j: eff_draws_conditional(post_eff, z, j, tuple(sorted(selected)))
                        for j in accept_final
                    }
                    fallback = any("using all draws" in str(c.message) for c in caught)
            except ConditioningError:
                draws = {j: post_eff.prob_draws(j, z) for j in accept_final}
                fallback = True
            mat = np.stack([draws[j] for j in accept_final])  # (levels, draws)
            top = mat.max(axis=0)
            obd = None
            for idx, j in enumerate(accept_final):
                if float(np.mean(mat[idx] >= cfg.obd_fraction * top)) > cfg.psi_obd:
                    obd = j
                    break
            no_obd_reason = None
            final_futile = float(np.mean(mat[-1] >= cfg.eff_cutoff)) < cfg.final_futility_level
            if final_futile:
                obd = None
                no_obd_reason = "final_futility"
            # display form: per characteristic, the active selected level (or
            # "(other)" when none of its selected levels is on)
            display: dict = {}
            for m in sorted(selected):
                _, c, level = meta[m]
                if m in pat:
                    display[c.name] = level
                else:
                    display.setdefault(c.name, "(other)")
            results.append(
                {
                    "pattern": display,
                    "indicators": {f"{meta[m][1].name}={meta[m][2]}": int(m in pat) for m in sorted(selected)},
                    "obd": obd,
                    "no_obd_reason": no_obd_reason,
                    "conditioning_fallback": bool(fallback),
                }
            )

        st.report = {
            "mtd_final": mtd_final,
            "acceptable_final": accept_final,
            "a_hat_final": post_tox.post_mean_a,
            "scaled_final": scaled_final,
            "selected": selected_names,
            "patterns": results,
            "tox_curve": list(post_tox.post_probs),
        }
        st.stage = STAGE_COMPLETE

    # ---- reporting ----

    def report_curves(self, pattern: dict | None = None) -> dict:
        """Per-dose posterior summaries for the console: mean and 95% band of
        toxicity and of efficacy for one covariate pattern.

        Uses a dedicated random stream so rendering a report never perturbs
        the trial's decision sequence.
        """
        st = self.state
        cfg = st.config
        now = max((p.arrival for p in st.patients), default=0.0) + max(cfg.tox_window, cfg.eff_window)
        levels = list(st.grid.levels())
        out: dict = {"doses": levels, "dosage": list(st.grid.dosage)}

        tox_data = self._tox_data(now) if st.patients else []
        post_tox = fit_tox_posterior(tox_data, st.grid, cfg.tox_prior_sd)
        bands = tox_curve_quantiles(tox_data, st.grid, cfg.tox_prior_sd)
        out["toxicity"] = {
            "mean": list(post_tox.post_probs),
            "lo": [b[0] for b in bands],
            "hi": [b[1] for b in bands],
        }

        schema = self.active_schema()
        scaled = st.p_tilde if st.p_tilde is not None else list(st.grid.skeleton)
        if st.report is not None and st.report.get("scaled_final"):
            scaled = st.report["scaled_final"]
        eligible = self._eligible_patients()
        if not eligible:
            out["efficacy"] = None
            return out
        data = self._eff_data(now, schema, full=st.stage == STAGE_COMPLETE)
        mcmc = replace(
            st.config.mcmc, seed=rngmod.derive_seed(st.seed, "report", len(st.patients))
        )
        post_eff = fit_eff_posterior(data, schema, scaled, mcmc)
        if pattern and schema.characteristics:
            # what-if patterns may be partial; missing characteristics sit at
            # their reference level
            full = {c.name: pattern.get(c.name, c.reference) for c in schema.characteristics}
            z = schema.encode(full)
        else:
            z = np.zeros(schema.n_indicators)
        condition = tuple(sorted(select_covariates(post_eff, cfg.psi_select))) if st.stage == STAGE_COMPLETE else ()
        mean, lo, hi = [], [], []
        fallback = False
        for j in levels:
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    draws = eff_draws_conditional(post_eff, z, j, condition)
                    fallback = fallback or any("using all draws" in str(c.message) for c in caught)
            except ConditioningError:
                draws = post_eff.prob_draws(j, z)
                fallback = True
            mean.append(float(np.mean(draws)))
            lo.append(float(np.quantile(draws, 0.025)))
            hi.append(float(np.quantile(draws, 0.975)))
        out["efficacy"] = {
            "mean": mean,
            "lo": lo,
            "hi": hi,
            "conditioning_fallback": fallback,
            "inclusion": {
                name: float(p)
                for name, p in zip(post_eff.indicator_names, post_eff.inclusion_probs)
            },
        }
        return out

    def summary(self) -> dict:
        st = self.state
        cfg = st.config
        out = {
            "stage": st.stage,
            "n_enrolled": len(st.patients),
            "mtd_tox": st.mtd_tox,
            "mtd_pk": st.mtd_pk,
            "mtd_star": st.mtd_star,
            "acceptable": list(st.acceptable),
            "exclusions": list(st.exclusions),
            "futility_log": list(st.futility_log),
            "flags": list(st.flags),
            "report": st.report,
            "allocation": {str(j): 0 for j in st.grid.levels()},
        }
        for p in st.patients:
            out["allocation"][str(p.dose)] += 1
        return out


def _selected_patterns(schema: CovariateSchema, selected: set) -> list:
    """All consistent on/off combinations of the selected indicators.

    Within one characteristic at most one selected indicator can be on; a
    pattern is a set of 'on' indicator indices.
    """
    if not selected:
        return [set()]
    by_char: dict = {}
    for m in sorted(selected):
        by_char.setdefault(schema.indicator_meta()[m][0], []).append(m)
    patterns = [set()]
    for _, ms in sorted(by_char.items()):
        options = [None] + ms
        patterns = [
            base | ({m} if m is not None else set()) for base in patterns for m in options
        ]
    return patterns
