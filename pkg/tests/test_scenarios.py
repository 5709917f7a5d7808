import json
import math
import pathlib

import numpy as np
import pytest
from scipy.special import ndtri

from doseopt.grid import InputError
from doseopt.scenarios import (
    PkTruth,
    Scenario,
    ScenarioError,
    builtin_scenarios,
    derive_dose_grid,
    load_scenario,
    toxicity_probability,
)
from doseopt.simulate import screened_patient, simulate_efficacy, simulate_toxicity

PK = PkTruth()
CANONICAL = (0.05, 0.12, 0.25, 0.38)


class TestGridDerivation:
    def test_median_target_gives_product(self):
        (d,) = derive_dose_grid([0.5], PkTruth(clearance_mean=19.6, omega_cl=0.308, auc_limit=46.31))
        assert d == pytest.approx(19.6 * 46.31, rel=1e-12)

    def test_round_trip_to_targets(self):
        dosage = derive_dose_grid(CANONICAL, PK)
        back = toxicity_probability(dosage, PK)
        np.testing.assert_allclose(back, CANONICAL, atol=1e-9)

    def test_limit_rescales_all_dosages(self):
        d1 = derive_dose_grid(CANONICAL, PK)
        d2 = derive_dose_grid(CANONICAL, PkTruth(auc_limit=2 * 46.31))
        np.testing.assert_allclose(np.asarray(d2) / np.asarray(d1), 2.0, rtol=1e-12)

    def test_rejects_non_increasing_targets(self):
        with pytest.raises(InputError):
            derive_dose_grid([0.2, 0.1], PK)


class TestPatientSampling:
    def test_degenerate_prevalence(self):
        scen = load_scenario("scenario1")
        from dataclasses import replace

        from doseopt.covariates import Characteristic, CovariateSchema

        schema = CovariateSchema(
            (Characteristic("only", ("a", "b"), (1.0, 0.0), "a"),)
        )
        d = scen.to_dict()
        d["schema"] = schema.to_dict()
        scen2 = Scenario.from_dict(d)
        for i in range(50):
            assert screened_patient(scen2, 5, 0, i).pattern["only"] == "a"

    def test_prevalence_frequencies(self):
        scen = load_scenario("scenario1")
        n = 20000
        females = sum(
            screened_patient(scen, 7, 0, i).pattern["gender"] == "female" for i in range(n)
        )
        assert females / n == pytest.approx(0.48, abs=0.01)

    def test_patterns_valid_for_schema(self):
        scen = load_scenario("scenario1")
        for i in range(100):
            z = scen.schema.encode(screened_patient(scen, 9, 0, i).pattern)
            # at most one indicator per characteristic
            ofs = 0
            for c in scen.schema.characteristics:
                block = z[ofs : ofs + len(c.levels) - 1]
                assert block.sum() <= 1
                ofs += len(c.levels) - 1


class TestToxicityGeneration:
    def test_marginal_rates_reproduce_targets(self):
        scen = load_scenario("scenario1")
        n = 150_000
        gen = np.random.default_rng(3)
        cl = np.exp(math.log(PK.clearance_mean) + PK.omega_cl * gen.standard_normal(n))
        for level, target in zip((1, 2, 3, 4), CANONICAL):
            rate = np.mean(scen.dosage[level - 1] / cl > scen.auc_limit)
            assert rate == pytest.approx(target, abs=0.004)

    def test_huge_limit_never_toxic(self):
        scen = load_scenario("scenario1")
        d = scen.to_dict()
        d["toxicity_targets"] = [1e-12, 2e-12, 3e-12, 4e-12]
        low = Scenario.from_dict(d)
        for i in range(200):
            sp = screened_patient(low, 11, 0, i)
            y, _ = simulate_toxicity(4, low, sp.clearance)
            assert y == 0

    def test_shifted_scenarios_match_printed_curves(self):
        for name, printed in [
            ("scenario3", (0.02, 0.06, 0.14, 0.24)),
            ("scenario7", (0.02, 0.06, 0.14, 0.24)),
            ("scenario8", (0.12, 0.23, 0.41, 0.56)),
        ]:
            scen = load_scenario(name)
            np.testing.assert_allclose(scen.true_toxicity, printed, atol=0.011)


class TestEfficacyRules:
    def test_table_lookups(self):
        s1 = load_scenario("scenario1")
        assert s1.efficacy({"gene": "NTRK", "alteration": "fusion", "prior_treatment": "no", "gender": "male"}, 3) == 0.95
        s3 = load_scenario("scenario3")
        assert s3.efficacy({"gene": "ALK", "alteration": "other", "prior_treatment": "no", "gender": "male"}, 1) == 0.5

    def test_zero_probability_never_fires(self):
        scen = load_scenario("scenario7")
        pat = {"gene": "ALK", "alteration": "other", "prior_treatment": "no", "gender": "male"}
        assert simulate_efficacy(pat, 1, scen, u=1e-9) == 1  # u < 0.15
        d = scen.to_dict()
        d["rules"][0]["probs"] = [0.0, 0.0, 0.0, 0.0]
        z = Scenario.from_dict(d)
        assert all(simulate_efficacy(pat, 1, z, u) == 0 for u in (0.0001, 0.5, 0.9999))

    def test_missing_catch_all_is_rejected(self):
        scen = load_scenario("scenario1")
        d = scen.to_dict()
        d["rules"] = d["rules"][:-1]  # drop the catch-all
        with pytest.raises(InputError):
            Scenario.from_dict(d)

    def test_every_pattern_covered_in_builtins(self):
        for name, scen in builtin_scenarios().items():
            for pattern, prev in scen.all_patterns():
                assert 0.0 <= scen.efficacy(pattern, 1) <= 1.0

    def test_obd_maps(self):
        s5 = load_scenario("scenario5")
        assert s5.true_obd({"gene": "NTRK", "alteration": "fusion", "prior_treatment": "no", "gender": "male"}) == 1
        assert s5.true_obd({"gene": "ALK", "alteration": "fusion", "prior_treatment": "no", "gender": "male"}) == 3
        assert s5.true_obd({"gene": "ALK", "alteration": "other", "prior_treatment": "no", "gender": "male"}) is None

    def test_influential_indicator_derivation(self):
        assert load_scenario("scenario1").influential_indicators() == set()
        assert load_scenario("scenario5").influential_indicators() == {"gene=NTRK"}
        assert load_scenario("scenario6").influential_indicators() == {"gene=NTRK", "gene=ROS1"}
        assert load_scenario("scenario7").influential_indicators() == {"gender=female"}
        # reference reordering changes the differentiating coding
        s5r = load_scenario("scenario5").with_reference("gene", "NTRK")
        assert s5r.influential_indicators() == {"gene=ROS1", "gene=ALK"}


class TestScenarioFiles:
    def test_packaged_files_match_builtins(self):
        root = pathlib.Path(__file__).resolve().parents[1] / "src" / "doseopt" / "scenarios"
        for name, scen in builtin_scenarios().items():
            on_disk = json.loads((root / f"{name}.json").read_text())
            assert on_disk == scen.to_dict()

    def test_reference_reordering_keeps_truth(self):
        scen = load_scenario("scenario5")
        flipped = scen.with_reference("alteration", "fusion")
        assert flipped.rules == scen.rules
        assert flipped.true_toxicity == scen.true_toxicity
        # coding changed: fusion indicator disappears, other/amplification appear
        assert "alteration=fusion" not in flipped.schema.indicator_names()
        assert "alteration=other" in flipped.schema.indicator_names()

    def test_reordering_preserves_outcome_streams(self):
        scen = load_scenario("scenario5")
        flipped = scen.with_reference("alteration", "fusion")
        for i in range(40):
            a = screened_patient(scen, 13, 2, i)
            b = screened_patient(flipped, 13, 2, i)
            assert a.pattern == b.pattern
            assert a.clearance == b.clearance
            assert a.eff_u == b.eff_u
