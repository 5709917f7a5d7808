"""Operating characteristics aggregated over replicated trials.

Identification of the target population compares the set of patterns the
trial declared unresponsive (futility eliminations during the trial plus
no-OBD cells at the final analysis) with the scenario's true futile set.
Correct-selection probabilities are stratified by the true subgroups (target
patterns grouped by their true optimal level) and weighted by prevalence
inside each subgroup.  Covariate-selection rates follow the convention that
only indicators whose value changes the true OBD inside the target
population count as influential; every other indicator contributes to the
false-positive rate.
"""

from __future__ import annotations

import json
from collections import Counter

import numpy as np

from doseopt.scenarios import Scenario


def _pattern_key(pattern: dict) -> tuple:
    return tuple(sorted(pattern.items()))


def _violates(pattern: dict, exc: dict) -> bool:
    value = pattern.get(exc["characteristic"])
    if exc["op"] == "eq":
        return value != exc["level"]
    return value == exc["level"]


def _indicator_on(pattern: dict, indicator_name: str) -> int:
    char, level = indicator_name.split("=", 1)
    return int(pattern.get(char) == level)


def recommended_dose(state: dict, pattern: dict):
    """The dose the completed trial recommends for a covariate pattern.

    None when the trial stopped early, the pattern was excluded, or the final
    analysis declared its cell futile.
    """
    if state["stage"] != "Complete" or state["report"] is None:
        return None
    for exc in state["exclusions"]:
        if _violates(pattern, exc):
            return None
    for cell in state["report"]["patterns"]:
        if all(_indicator_on(pattern, name) == v for name, v in cell["indicators"].items()):
            return cell["obd"]
    return None


def removal_events(state: dict) -> list:
    """(assessment_id, predicate) for every futility removal, in order."""
    events = []
    for exc in state["exclusions"]:
        events.append((exc["assessment"], ("exclusion", dict(exc))))
    if state["stage"] == "Complete" and state["report"] is not None:
        for cell in state["report"]["patterns"]:
            if cell["obd"] is None:
                events.append((3, ("no_obd", dict(cell["indicators"]))))
    return sorted(events, key=lambda e: e[0])


def _removed_set(event, candidates, exclusions_so_far):
    kind, payload = event
    removed = set()
    for key, pattern in candidates.items():
        if any(_violates(pattern, e) for e in exclusions_so_far):
            continue  # already gone
        if kind == "exclusion":
            if _violates(pattern, payload):
                removed.add(key)
        else:
            if all(_indicator_on(pattern, name) == v for name, v in payload.items()):
                removed.add(key)
    return removed


def classify_identification(state: dict, scenario: Scenario) -> dict:
    """Target-population identification for one replicate."""
    patterns = {_pattern_key(p): p for p, _ in scenario.all_patterns()}
    true_futile = {
        _pattern_key(p) for p, _ in scenario.all_patterns() if not scenario.in_target_population(p)
    }
    stopped = state["stage"] == "TerminatedFutile"

    identified: set = set()
    exclusions_so_far: list = []
    correct_event_at: set = set()
    any_correct_removal = False
    any_wrong_removal = False
    for assessment, event in removal_events(state):
        removed = _removed_set(event, patterns, exclusions_so_far)
        if event[0] == "exclusion":
            exclusions_so_far.append(event[1])
        if removed and removed <= true_futile:
            any_correct_removal = True
            correct_event_at.add(assessment)
        if removed - true_futile:
            any_wrong_removal = True
        identified |= removed

    correct = (not stopped) and identified == true_futile
    return {
        "stopped": stopped,
        "correct": correct,
        "correct_events_at": sorted(correct_event_at),
        "incorrect": (not stopped) and not correct,
        "incorrect_subgroup": any_wrong_removal,
        "partial": any_correct_removal,
    }


def selection_rates(state: dict, scenario: Scenario):
    """(tpr, fpr) for one completed replicate; tpr is None when no indicator
    is OBD-differentiating."""
    if state["stage"] != "Complete" or state["report"] is None:
        return None, None
    selected = set(state["report"]["selected"])
    influential = scenario.influential_indicators()
    all_names = {f"{c.name}={level}" for _, c, level in scenario.schema.indicator_meta()}
    noise = all_names - influential
    tpr = len(selected & influential) / len(influential) if influential else None
    fpr = len(selected & noise) / len(noise) if noise else 0.0
    return tpr, fpr


def pcs_by_subgroup(state: dict, scenario: Scenario) -> dict:
    """Prevalence-weighted correct-selection fraction per true subgroup."""
    out = {}
    for obd, members in scenario.true_subgroups().items():
        total = sum(prev for _, prev in members)
        hit = 0.0
        for pattern, prev in members:
            if recommended_dose(state, pattern) == obd:
                hit += prev
        out[f"obd{obd}"] = hit / total
    return out


def acceptable_set_accuracy(state: dict, scenario: Scenario, p_target: float) -> dict:
    true_mtd = scenario.true_mtd(p_target)
    est = state["mtd_star"]
    if est is None:
        return {"evaluated": False}
    return {
        "evaluated": True,
        "correct": est == true_mtd,
        "overdose": est > true_mtd,
        "missed_max": est < true_mtd,
    }


def compute_study_metrics(scenario: Scenario, results: list, config) -> dict:
    """Aggregate operating characteristics; order-independent and exactly
    reproducible from saved traces."""
    n = len(results)
    ident = [classify_identification(r["state"], scenario) for r in results]
    # per-assessment proportions count replicates with a correct removal
    # event at that assessment (a replicate can contribute to several)
    by_assessment = Counter()
    for c in ident:
        if c["correct"]:
            for k in c["correct_events_at"]:
                by_assessment[k] += 1
    tprs, fprs = [], []
    for r in results:
        tpr, fpr = selection_rates(r["state"], scenario)
        if fpr is not None:
            fprs.append(fpr)
        if tpr is not None:
            tprs.append(tpr)
    pcs_total: dict = {}
    pcs_correct: dict = {}
    n_correct = sum(c["correct"] for c in ident)
    for r, c in zip(results, ident):
        for key, frac in pcs_by_subgroup(r["state"], scenario).items():
            pcs_total[key] = pcs_total.get(key, 0.0) + frac
            if c["correct"]:
                pcs_correct[key] = pcs_correct.get(key, 0.0) + frac
    alloc = np.zeros(len(scenario.grid_targets))
    n_alloc = 0
    for r in results:
        for p in r["state"]["patients"]:
            alloc[p["dose"] - 1] += 1
            n_alloc += 1
    acc = [acceptable_set_accuracy(r["state"], scenario, config.p_target) for r in results]
    acc_eval = [a for a in acc if a["evaluated"]]
    mtd_star_counts = Counter(
        r["state"]["mtd_star"] for r in results if r["state"]["mtd_star"] is not None
    )

    has_futile = any(not scenario.in_target_population(p) for p, _ in scenario.all_patterns())
    metrics = {
        "scenario": scenario.name,
        "n_reps": n,
        "identification": {
            "correct": sum(c["correct"] for c in ident) / n,
            "by_assessment": {str(k): by_assessment.get(k, 0) / n for k in (1, 2, 3)},
            "incorrect": sum(c["incorrect"] for c in ident) / n,
            "incorrect_subgroup": sum(c["incorrect_subgroup"] for c in ident) / n,
            "partial": (sum(c["partial"] for c in ident) / n) if has_futile else None,
            "early_stop": sum(c["stopped"] for c in ident) / n,
        },
        "pcs": {k: v / n for k, v in sorted(pcs_total.items())},
        "pcs_given_correct": (
            {k: v / n_correct for k, v in sorted(pcs_correct.items())} if n_correct else {}
        ),
        "selection": {
            "tpr": (sum(tprs) / len(tprs)) if tprs else None,
            "fpr": (sum(fprs) / len(fprs)) if fprs else None,
            "n_influential": len(scenario.influential_indicators()),
        },
        "allocation": list(alloc / n_alloc) if n_alloc else [],
        "acceptable_set": {
            "true_mtd": scenario.true_mtd(config.p_target),
            "correct": (sum(a["correct"] for a in acc_eval) / len(acc_eval)) if acc_eval else None,
            "overdose": (sum(a["overdose"] for a in acc_eval) / len(acc_eval)) if acc_eval else None,
            "missed_max": (sum(a["missed_max"] for a in acc_eval) / len(acc_eval)) if acc_eval else None,
        },
        "mtd_star_distribution": {str(k): v / n for k, v in sorted(mtd_star_counts.items())},
    }
    return metrics


def metrics_from_traces(scenario: Scenario, trace_paths, config) -> dict:
    """Recompute the aggregate from saved trace files (replay equivalence)."""
    results = []
    for path in sorted(trace_paths):
        with open(path) as fh:
            results.append(json.load(fh))
    results.sort(key=lambda r: r["replicate"])
    return compute_study_metrics(scenario, results, config)


def metrics_bytes(metrics: dict) -> bytes:
    return json.dumps(metrics, sort_keys=True).encode()
