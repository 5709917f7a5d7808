import numpy as np
import pytest

from doseopt.covariates import entrectinib_schema
from doseopt.design import (
    DesignConfig,
    ExcludedSubgroupError,
    StageError,
    TrialEngine,
    admissible_levels,
    optimization_dose,
    randomize_dose,
)
from doseopt.grid import DoseGrid, InputError
from doseopt.rng import stream
from doseopt.scenarios import load_scenario
from doseopt.simulate import run_trial, screened_patient, simulate_toxicity

GRID = DoseGrid(dosage=(546.9, 632.1, 737.4, 826.2), skeleton=(0.05, 0.12, 0.25, 0.38))


def small_config(**kw):
    from doseopt.efficacy import SamplerConfig

    defaults = dict(n1=6, n2=8, mcmc=SamplerConfig(n_chains=2, n_iter=400, burn_in=200))
    defaults.update(kw)
    return DesignConfig(**defaults)


def drive_escalation(engine, outcomes, gap=2.0):
    """Enroll stage-1 patients with fixed toxicity outcomes."""
    cfg = engine.state.config
    schema = entrectinib_schema()
    pat = {"prior_treatment": "no", "gender": "male", "gene": "ALK", "alteration": "fusion"}
    doses = []
    for i, y in enumerate(outcomes):
        rec = engine.enroll(pat, at=i * gap)
        doses.append(rec["dose"])
        engine.record_outcome(
            rec["patient_id"],
            {
                "eff": 0,
                "tox": y,
                "tox_time": 1.0 if y else None,
                "auc": 40.0 + rec["dose"],
            },
        )
    return doses


class TestEscalation:
    def test_starts_at_lowest_dose(self):
        engine = TrialEngine.new(small_config(), GRID, entrectinib_schema(), seed=1)
        rec = engine.enroll({"prior_treatment": "no", "gender": "male", "gene": "ALK", "alteration": "fusion"}, at=0.0)
        assert rec["dose"] == 1
        assert rec["stage"] == "Escalation"

    def test_all_clean_escalates_to_top(self):
        engine = TrialEngine.new(small_config(n1=8, heterogeneity_enabled=False), GRID, entrectinib_schema(), seed=2)
        doses = drive_escalation(engine, [0] * 8, gap=6.0)  # full windows between patients
        assert max(doses) == 4
        assert engine.state.mtd_tox == 4
        # no dose skipping on the way up
        for a, b in zip(doses, doses[1:]):
            assert b <= a + 1

    def test_all_toxic_stays_at_bottom(self):
        engine = TrialEngine.new(small_config(n1=6, heterogeneity_enabled=False), GRID, entrectinib_schema(), seed=3)
        doses = drive_escalation(engine, [1] * 6)
        assert set(doses) == {1}
        assert engine.state.mtd_tox == 1
        assert engine.state.acceptable == [1]

    def test_pk_adjustment_shrinks_set(self):
        # high AUCs at every dose push the exposure MTD to level 1
        cfg = small_config(n1=6, heterogeneity_enabled=False)
        engine = TrialEngine.new(cfg, GRID, entrectinib_schema(), seed=4)
        pat = {"prior_treatment": "no", "gender": "male", "gene": "ALK", "alteration": "fusion"}
        for i in range(6):
            rec = engine.enroll(pat, at=i * 6.0)
            engine.record_outcome(rec["patient_id"], {"eff": 0, "tox": 0, "auc": 200.0})
        assert engine.state.mtd_pk == 1
        assert engine.state.mtd_star == min(engine.state.mtd_tox, 1)
        assert engine.state.acceptable == list(range(1, engine.state.mtd_star + 1))

    def test_pk_disabled_passthrough(self):
        cfg = small_config(n1=6, pk_enabled=False, heterogeneity_enabled=False)
        engine = TrialEngine.new(cfg, GRID, entrectinib_schema(), seed=5)
        drive_escalation(engine, [0] * 6)
        assert engine.state.mtd_pk is None
        assert engine.state.mtd_star == engine.state.mtd_tox
        assert engine.state.acceptable == engine.state.acceptable_tox_only


class TestAdmissible:
    def test_full_set_when_all_clear_floor(self):
        out = admissible_levels([0.5, 0.4], [1, 2], {1: 9, 2: 9}, floor=0.2, min_treated=3)
        assert out == [1, 2]

    def test_low_efficacy_with_enough_patients_dropped(self):
        out = admissible_levels([0.05, 0.4], [1, 2], {1: 5, 2: 5}, floor=0.2, min_treated=3)
        assert out == [2]

    def test_underexplored_dose_retained(self):
        out = admissible_levels([0.05, 0.4], [3, 4], {3: 2, 4: 5}, floor=0.2, min_treated=3)
        assert out == [3, 4]


class TestRandomize:
    def test_single_level_is_certain(self):
        gen = stream(1, "x")
        assert randomize_dose([3], [0.4], gen) == 3

    def test_symmetric_levels_split_evenly(self):
        gen = stream(2, "x")
        draws = [randomize_dose([1, 2], [0.2, 0.2], gen) for _ in range(4000)]
        assert abs(np.mean([d == 1 for d in draws]) - 0.5) < 0.03

    def test_proportional_frequencies(self):
        gen = stream(3, "x")
        n = 100_000
        draws = np.array([randomize_dose([1, 2], [0.1, 0.3], gen) for _ in range(n)])
        assert abs(np.mean(draws == 1) - 0.25) < 0.01
        assert abs(np.mean(draws == 2) - 0.75) < 0.01

    def test_all_zero_falls_back_uniform(self):
        gen = stream(4, "x")
        draws = [randomize_dose([1, 2], [0.0, 0.0], gen) for _ in range(2000)]
        assert abs(np.mean([d == 1 for d in draws]) - 0.5) < 0.05


class TestOptimization:
    def test_picks_minimum_within_alpha(self):
        assert optimization_dose([1, 2, 3], [0.50, 0.70, 0.72], alpha=0.20) == 2

    def test_steep_curve_takes_maximum(self):
        assert optimization_dose([1, 2, 3], [0.1, 0.4, 0.7], alpha=0.2) == 3

    def test_alpha_function_endpoints(self):
        cfg = DesignConfig()
        assert cfg.alpha_threshold(0) == pytest.approx(0.40)
        assert cfg.alpha_threshold(cfg.n2) == pytest.approx(0.20)


class TestStateMachine:
    def test_stage_transitions_and_counts(self):
        scen = load_scenario("scenario4")
        cfg = small_config(n1=6, n2=6)
        res = run_trial(scen, cfg, seed=9, design="optimal")
        st = res["state"]
        assert st["stage"] in ("Complete", "TerminatedFutile")
        if st["stage"] == "Complete":
            stages = [p["stage"] for p in st["patients"]]
            assert stages[:6] == ["Escalation"] * 6
            n_ar = sum(s == "AdaptiveRandomization" for s in stages)
            assert n_ar == cfg.n_randomized
            assert len(stages) == cfg.n_max

    def test_assigned_doses_in_acceptable_set(self):
        scen = load_scenario("scenario1")
        cfg = small_config(n1=6, n2=8)
        res = run_trial(scen, cfg, seed=11, design="optimal")
        st = res["state"]
        for p in st["patients"][cfg.n1:]:
            assert p["dose"] in st["acceptable"]

    def test_excluded_subgroup_rejected(self):
        scen = load_scenario("scenario1")
        cfg = small_config(n1=6, n2=8)
        res = run_trial(scen, cfg, seed=11, design="optimal")
        st = res["state"]
        from doseopt.design import TrialState

        engine = TrialEngine(TrialState.from_dict(st))
        if not st["exclusions"]:
            pytest.skip("this seed produced no elimination")
        exc = st["exclusions"][0]
        bad = {"prior_treatment": "no", "gender": "male", "gene": "ALK", "alteration": "fusion"}
        bad[exc["characteristic"]] = exc["level"] if exc["op"] == "ne" else "other"
        if engine.state.stage == "Complete":
            with pytest.raises(StageError):
                engine.enroll(bad, at=1e6)
        else:
            with pytest.raises(ExcludedSubgroupError):
                engine.enroll(bad, at=1e6)

    def test_eliminated_subgroups_never_reenrolled(self):
        scen = load_scenario("scenario1")
        cfg = small_config(n1=8, n2=10)
        res = run_trial(scen, cfg, seed=21, design="optimal")
        st = res["state"]
        for exc in st["exclusions"]:
            first_after = False
            for p in st["patients"]:
                enrolled_after = p["pid"] >= 0 and first_after
                violates = (
                    p["pattern"][exc["characteristic"]] != exc["level"]
                    if exc["op"] == "eq"
                    else p["pattern"][exc["characteristic"]] == exc["level"]
                )
                if enrolled_after:
                    assert not violates
            # exclusion assessments happen at known patient counts
            boundary = cfg.n1 if exc["assessment"] == 1 else cfg.n1 + cfg.n_randomized
            for p in st["patients"][boundary:]:
                violates = (
                    p["pattern"][exc["characteristic"]] != exc["level"]
                    if exc["op"] == "eq"
                    else p["pattern"][exc["characteristic"]] == exc["level"]
                )
                assert not violates

    def test_naive_design_contract(self):
        scen = load_scenario("scenario3")
        cfg = small_config(n1=6, n2=6)
        res = run_trial(scen, cfg, seed=13, design="naive")
        st = res["state"]
        assert st["exclusions"] == []
        assert all(o["influential"] is None for o in st["futility_log"])
        if st["report"]:
            assert st["report"]["selected"] == []
            assert len(st["report"]["patterns"]) == 1

    def test_serialization_round_trip(self):
        scen = load_scenario("scenario4")
        cfg = small_config(n1=6, n2=6)
        res = run_trial(scen, cfg, seed=17)
        from doseopt.design import TrialState

        state = TrialState.from_dict(res["state"])
        assert state.to_dict() == res["state"]
