/** Typed client for the trial-conduct service (/v1). */

export interface Characteristic {
  name: string;
  levels: string[];
  prevalence: number[];
  reference: string;
  response_order: string[];
  slab_sd: number;
  q_char: number;
  q_level: number;
}

export interface CovariateSchema {
  characteristics: Characteristic[];
}

export interface Recommendation {
  patient_id: number;
  dose: number;
  stage: string;
  rationale: string;
}

export interface FutilitySide {
  side: number;
  prob_eff: number;
  n: number;
  futile: boolean;
  enough: boolean;
}

export interface FutilityOutcome {
  assessment_id: number;
  influential: string | null;
  eliminated: { characteristic: string; level: string; op: string; assessment: number } | null;
  trial_stop: boolean;
  sides: FutilitySide[];
}

export interface PatternCell {
  pattern: Record<string, string>;
  indicators: Record<string, number>;
  obd: number | null;
  no_obd_reason: string | null;
  conditioning_fallback: boolean;
}

export interface CurveBand {
  mean: number[];
  lo: number[];
  hi: number[];
  conditioning_fallback?: boolean;
  inclusion?: Record<string, number>;
}

export interface ReportCurves {
  doses: number[];
  dosage: number[];
  toxicity: CurveBand;
  efficacy: CurveBand | null;
  pattern?: Record<string, string>;
}

export interface TrialReport {
  trial_id: string;
  version: number;
  stage: string;
  n_enrolled: number;
  mtd_tox: number | null;
  mtd_pk: number | null;
  mtd_star: number | null;
  acceptable: number[];
  exclusions: { characteristic: string; level: string; op: string; assessment: number }[];
  futility_log: FutilityOutcome[];
  flags: string[];
  report: {
    mtd_final: number;
    acceptable_final: number[];
    selected: string[];
    patterns: PatternCell[];
  } | null;
  allocation: Record<string, number>;
  schema: CovariateSchema;
  curves?: ReportCurves;
}

export interface ApiError {
  code: string;
  message: string;
  field_paths: string[];
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(public status: number, public body: ApiError) {
    super(body.message);
  }
}

export class TrialApi {
  constructor(private base = "", private fetchImpl: FetchLike = fetch.bind(globalThis)) {}

  private async call<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.base + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    const body = await res.json();
    if (!res.ok) {
      throw new ServiceError(res.status, body as ApiError);
    }
    return body as T;
  }

  listTrials(): Promise<{ trials: string[] }> {
    return this.call("/v1/trials");
  }

  getReport(trialId: string, pattern?: Record<string, string>): Promise<TrialReport> {
    const qs = new URLSearchParams(pattern ?? {});
    const suffix = qs.toString() ? `?${qs.toString()}` : "";
    return this.call(`/v1/trials/${trialId}/report${suffix}`);
  }

  enroll(trialId: string, pattern: Record<string, string>, at: number): Promise<Recommendation> {
    return this.call(`/v1/trials/${trialId}/patients`, {
      method: "POST",
      body: JSON.stringify({ pattern, at }),
    });
  }

  recordOutcome(
    trialId: string,
    patientId: number,
    outcome: Record<string, number | null>,
  ): Promise<{ stage: string }> {
    return this.call(`/v1/trials/${trialId}/patients/${patientId}/outcomes`, {
      method: "POST",
      body: JSON.stringify(outcome),
    });
  }
}
