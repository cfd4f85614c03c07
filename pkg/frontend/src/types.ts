/** Wire types for the labeling service JSON API. */

export interface SamplePayload {
  id: string;
  features: number[];
  category: number | null;
  display_url: string | null;
}

export interface LabelTask {
  task_id: string;
  candidate: SamplePayload;
  assigned_category: number;
  assigned_category_name: string;
  confidence: number;
  exemplars: SamplePayload[];
  pending: number;
  labeled: number;
}

export type Verdict = "tp" | "fp";

export interface RoundInfo {
  round: number;
  pending: number;
  labeled: number;
  categories: string[];
}

/** Outcome of asking for the next task. */
export type NextTaskResult =
  | { kind: "task"; task: LabelTask }
  | { kind: "round-complete" }
  | { kind: "no-round" }
  | { kind: "error"; message: string };

/** Outcome of posting a verdict. */
export type DecisionResult =
  | { kind: "recorded"; verdict: Verdict }
  | { kind: "duplicate"; recorded: Verdict }
  | { kind: "unknown-task" }
  | { kind: "error"; message: string };
