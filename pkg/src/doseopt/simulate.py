"""Scenario-driven Monte Carlo: patient generation and replicated trials.

Patient-level randomness is keyed by (study seed, replicate, screening
index), so comparator arms sharing a seed see identical screened patients,
clearances, and latent event times; arms differ only through the decisions
the design makes.  Toxicity is generated mechanistically: a lognormal
clearance gives the AUC at the assigned dosage and toxicity occurs when the
AUC exceeds the scenario limit.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from doseopt import rng as rngmod
from doseopt.design import (
    STAGE_TERMINATED,
    DesignConfig,
    ExcludedSubgroupError,
    StageError,
    TrialEngine,
)
from doseopt.grid import InputError
from doseopt.scenarios import Scenario

DESIGNS = ("optimal", "naive", "nopk")


@dataclass(frozen=True)
class ScreenedPatient:
    gap: float  # weeks since the previous screening
    pattern: dict
    clearance: float
    tox_frac: float  # latent event-time fractions of the windows
    eff_u: float  # latent response uniform
    eff_frac: float


def screened_patient(scenario: Scenario, study_seed: int, replicate: int, index: int) -> ScreenedPatient:
    gen = rngmod.stream(study_seed, replicate, "patient", index)
    gap = float(gen.exponential(1.0 / scenario.accrual_rate))
    pattern = {}
    for c in scenario.schema.characteristics:
        pattern[c.name] = str(gen.choice(list(c.levels), p=list(c.prevalence)))
    cl = float(
        math.exp(math.log(scenario.pk.clearance_mean) + scenario.pk.omega_cl * gen.standard_normal())
    )
    tox_frac, eff_u, eff_frac = (float(x) for x in gen.random(3))
    return ScreenedPatient(gap=gap, pattern=pattern, clearance=cl,
                           tox_frac=tox_frac, eff_u=eff_u, eff_frac=eff_frac)


def simulate_toxicity(dose_index: int, scenario: Scenario, clearance: float):
    """(toxicity indicator, AUC) at a dose for a given clearance."""
    auc = scenario.dosage[dose_index - 1] / clearance
    return int(auc > scenario.auc_limit), auc


def simulate_efficacy(pattern: dict, dose_index: int, scenario: Scenario, u: float) -> int:
    return int(u < scenario.efficacy(pattern, dose_index))


def design_config(base: DesignConfig, design: str, scenario: Scenario) -> DesignConfig:
    if design not in DESIGNS:
        raise InputError(f"unknown design {design!r}; expected one of {DESIGNS}")
    cfg = replace(
        base,
        pk_threshold=scenario.auc_limit,
        pk_prior_clearance=scenario.pk.clearance_mean,
    )
    if design == "naive":
        cfg = replace(cfg, heterogeneity_enabled=False)
    elif design == "nopk":
        cfg = replace(cfg, pk_enabled=False)
    return cfg


def run_trial(scenario: Scenario, config: DesignConfig, seed: int, design: str = "optimal",
              replicate: int = 0) -> dict:
    """One complete trial; deterministic in (scenario, config, seed, replicate)."""
    cfg = design_config(config, design, scenario)
    engine = TrialEngine.new(cfg, scenario.design_grid(), scenario.schema,
                             seed=rngmod.derive_seed(seed, replicate, "trial"))
    t = 0.0
    screen = 0
    naive_granted = False
    while engine.state.stage != STAGE_TERMINATED and len(engine.state.patients) < cfg.n_max:
        cand = screened_patient(scenario, seed, replicate, screen)
        screen += 1
        t += cand.gap
        if engine.state.stage1_time is not None:
            t = max(t, engine.state.stage1_time)
        in_stage2 = len(engine.state.patients) >= cfg.n1
        if design == "naive" and in_stage2 and not naive_granted:
            # the naive comparator is granted the true target population once
            # dose-escalation ends: non-target patients stop enrolling and
            # stage-1 non-target observations leave its efficacy fits
            constraints = scenario.target_constraints()
            for con in constraints or ():
                engine.state.exclusions.append(dict(con, assessment=0))
            naive_granted = True
        if design == "naive" and in_stage2 and not scenario.in_target_population(cand.pattern):
            continue
        if engine.pattern_excluded(cand.pattern) is not None:
            continue
        try:
            rec = engine.enroll(cand.pattern, at=t)
        except ExcludedSubgroupError:
            continue
        except StageError:
            break  # terminated at a futility assessment
        dose = rec["dose"]
        y_tox, auc = simulate_toxicity(dose, scenario, cand.clearance)
        y_eff = simulate_efficacy(cand.pattern, dose, scenario, cand.eff_u)
        outcome = {
            "eff": y_eff,
            "eff_time": cand.eff_frac * cfg.eff_window if y_eff else None,
            "tox": y_tox,
            "tox_time": cand.tox_frac * cfg.tox_window if y_tox else None,
            "auc": auc,
        }
        engine.record_outcome(rec["patient_id"], outcome)

    return {
        "scenario": scenario.name,
        "design": design,
        "seed": seed,
        "replicate": replicate,
        "n_screened": screen,
        "state": engine.state.to_dict(),
        "summary": engine.summary(),
    }


def trace_bytes(result: dict) -> bytes:
    return json.dumps(result, sort_keys=True).encode()


def _one_replicate(args):
    scenario_dict, config_dict, seed, design, replicate = args
    scenario = Scenario.from_dict(scenario_dict)
    config = DesignConfig.from_dict(config_dict)
    return run_trial(scenario, config, seed, design, replicate)


def run_replicates(scenario: Scenario, config: DesignConfig, n_reps: int, seed: int,
                   design: str = "optimal", workers: int | None = None) -> list:
    """All replicate traces, in replicate order."""
    workers = workers or int(os.environ.get("DOSEOPT_WORKERS", "0")) or (os.cpu_count() or 1)
    jobs = [(scenario.to_dict(), config.to_dict(), seed, design, r) for r in range(n_reps)]
    if workers <= 1 or n_reps <= 1:
        return [_one_replicate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one_replicate, jobs, chunksize=max(1, n_reps // (8 * workers))))


def run_study(scenario: Scenario, config: DesignConfig, n_reps: int, seed: int,
              design: str = "optimal", workers: int | None = None,
              trace_dir=None) -> dict:
    """Replicated trials plus the aggregated operating characteristics."""
    from doseopt.metrics import compute_study_metrics

    results = run_replicates(scenario, config, n_reps, seed, design, workers)
    if trace_dir is not None:
        import pathlib

        td = pathlib.Path(trace_dir)
        td.mkdir(parents=True, exist_ok=True)
        for res in results:
            (td / f"{scenario.name}_{design}_{res['replicate']:05d}.json").write_bytes(
                trace_bytes(res)
            )
    metrics = compute_study_metrics(scenario, results, config)
    return {"metrics": metrics, "results": results}
