import { describe, expect, it } from "vitest";

import type { ReportCurves, TrialReport } from "../src/api.js";
import {
  renderCurveChart,
  renderEnrollmentForm,
  renderFutilityBanner,
  renderObdTable,
  renderRecommendation,
  renderSummary,
  renderWhatIf,
  show,
} from "../src/render.js";

const schema = {
  characteristics: [
    {
      name: "gender",
      levels: ["male", "female"],
      prevalence: [0.52, 0.48],
      reference: "male",
      response_order: [],
      slab_sd: 5,
      q_char: 0.5,
      q_level: 0.5,
    },
  ],
};

const curves: ReportCurves = {
  doses: [1, 2, 3, 4],
  dosage: [546.9, 632.1, 737.4, 826.2],
  toxicity: { mean: [0.05, 0.12, 0.25, 0.38], lo: [0.01, 0.04, 0.1, 0.2], hi: [0.2, 0.3, 0.45, 0.6] },
  efficacy: {
    mean: [0.31415, 0.52, 0.7001, 0.71],
    lo: [0.2, 0.4, 0.6, 0.61],
    hi: [0.45, 0.66, 0.81, 0.82],
    conditioning_fallback: false,
  },
  pattern: {},
};

function report(overrides: Partial<TrialReport> = {}): TrialReport {
  return {
    trial_id: "t1",
    version: 3,
    stage: "AdaptiveRandomization",
    n_enrolled: 27,
    mtd_tox: 3,
    mtd_pk: 3,
    mtd_star: 3,
    acceptable: [1, 2, 3],
    exclusions: [],
    futility_log: [],
    flags: [],
    report: null,
    allocation: { "1": 5, "2": 9, "3": 11, "4": 2 },
    schema,
    curves,
    ...overrides,
  };
}

describe("summary", () => {
  it("renders payload numbers verbatim", () => {
    const html = renderSummary(report());
    expect(html).toContain(">27<");
    expect(html).toContain(">3<");
    expect(html).toContain("1, 2, 3");
    expect(html).toMatchSnapshot();
  });

  it("uses an em dash for missing values", () => {
    const html = renderSummary(report({ mtd_tox: null, mtd_pk: null, mtd_star: null, acceptable: [] }));
    expect(html).toContain("—");
    expect(html).not.toContain("null");
  });
});

describe("recommendation card", () => {
  it("shows the assigned dose and rationale", () => {
    const html = renderRecommendation(
      { dose: 2, stage: "Optimization", rationale: "lowest dose within 0.25 of the best estimated efficacy", patient_id: 41 },
      null,
    );
    expect(html).toContain("Assign dose level 2");
    expect(html).toContain("patient 41");
    expect(html).toMatchSnapshot();
  });

  it("blocks excluded subgroups with the futility explanation", () => {
    const html = renderRecommendation(null, {
      code: "excluded_subgroup",
      message: "subgroup alteration=other was closed at futility assessment 1",
    });
    expect(html).toContain("Enrollment blocked");
    expect(html).toContain("futility assessment 1");
    expect(html).toContain("blocked");
    expect(html).toMatchSnapshot();
  });
});

describe("futility banner", () => {
  it("is quiet without eliminations", () => {
    expect(renderFutilityBanner([], "Escalation")).toContain("No futility eliminations");
  });

  it("names the closed subgroup and assessment", () => {
    const html = renderFutilityBanner(
      [
        {
          assessment_id: 2,
          influential: "alteration=fusion",
          eliminated: { characteristic: "alteration", level: "fusion", op: "eq", assessment: 2 },
          trial_stop: false,
          sides: [],
        },
      ],
      "Optimization",
    );
    expect(html).toContain("Assessment 2");
    expect(html).toContain("alteration≠fusion");
    expect(html).toMatchSnapshot();
  });

  it("reports a full stop", () => {
    const html = renderFutilityBanner(
      [{ assessment_id: 1, influential: null, eliminated: null, trial_stop: true, sides: [] }],
      "TerminatedFutile",
    );
    expect(html).toContain("trial stopped");
  });
});

describe("curve chart", () => {
  it("embeds every payload value verbatim in point titles", () => {
    const svg = renderCurveChart(curves);
    for (const v of [...curves.efficacy!.mean, ...curves.efficacy!.lo, ...curves.efficacy!.hi]) {
      expect(svg).toContain(String(v));
    }
    for (const v of [...curves.toxicity.mean]) {
      expect(svg).toContain(String(v));
    }
    expect(svg).toMatchSnapshot();
  });

  it("marks the recommended dose when given", () => {
    const svg = renderCurveChart(curves, 3);
    expect(svg).toContain("OBD 3");
  });

  it("flags the conditioning fallback", () => {
    const withFlag = { ...curves, efficacy: { ...curves.efficacy!, conditioning_fallback: true } };
    expect(renderCurveChart(withFlag)).toContain("unconditional draws");
  });
});

describe("what-if panel", () => {
  it("renders a single curve and OBD marker for a completed trial", () => {
    const r = report({
      stage: "Complete",
      report: {
        mtd_final: 3,
        acceptable_final: [1, 2, 3],
        selected: ["gender=female"],
        patterns: [
          { pattern: { gender: "female" }, indicators: { "gender=female": 1 }, obd: 2, no_obd_reason: null, conditioning_fallback: false },
          { pattern: { gender: "(other)" }, indicators: { "gender=female": 0 }, obd: 3, no_obd_reason: null, conditioning_fallback: false },
        ],
      },
    });
    const html = renderWhatIf(r, { gender: "female" });
    expect(html).toContain("gender=female");
    expect(html).toContain("OBD 2");
    const male = renderWhatIf(r, { gender: "male" });
    expect(male).toContain("OBD 3");
  });

  it("handles missing efficacy data", () => {
    const r = report({ curves: { ...curves, efficacy: null } });
    expect(renderWhatIf(r, {})).toContain("No response data yet");
  });
});

describe("enrollment form", () => {
  it("builds one select per characteristic with the reference marked", () => {
    const html = renderEnrollmentForm(report(), false);
    expect(html).toContain('name="gender"');
    expect(html).toContain("male (ref)");
    expect(html).toMatchSnapshot();
  });

  it("disables submission when the trial is closed", () => {
    const html = renderEnrollmentForm(report({ stage: "Complete" }), true);
    expect(html).toContain("disabled");
  });
});

describe("recommended-dose table", () => {
  it("prints each cell's dose verbatim", () => {
    const r = report({
      stage: "Complete",
      report: {
        mtd_final: 3,
        acceptable_final: [1, 2, 3],
        selected: ["gender=female"],
        patterns: [
          { pattern: { gender: "female" }, indicators: { "gender=female": 1 }, obd: 1, no_obd_reason: null, conditioning_fallback: false },
          { pattern: { gender: "(other)" }, indicators: { "gender=female": 0 }, obd: null, no_obd_reason: "final_futility", conditioning_fallback: false },
        ],
      },
    });
    const html = renderObdTable(r);
    expect(html).toContain("dose 1");
    expect(html).toContain("no OBD (final_futility)");
    expect(html).toMatchSnapshot();
  });
});

describe("show", () => {
  it("passes numbers through String()", () => {
    expect(show(0.31415)).toBe("0.31415");
    expect(show(3)).toBe("3");
    expect(show(null)).toBe("—");
  });
});
