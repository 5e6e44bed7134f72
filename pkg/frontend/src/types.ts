/** Response body of POST /predict on the inference service. */
export interface PredictionResponse {
  label: string;
  /** Per-class probabilities keyed by class name; sums to 1. */
  probabilities: Record<string, number>;
  model_id: string | null;
  /** Base64-encoded PNG relevance overlay; null unless explain was requested. */
  heatmap: string | null;
  latency_ms: number;
}

/** Technician verdict on a reviewed case. */
export type Decision =
  | "confirm"
  | "override-positive"
  | "override-negative"
  | "undecided";

export const DECISIONS: readonly Decision[] = [
  "undecided",
  "confirm",
  "override-positive",
  "override-negative",
];

/** One reviewed case as persisted in session history. */
export interface CaseRecord {
  /** ISO 8601 timestamp of the prediction. */
  timestamp: string;
  filename: string;
  label: string;
  probabilityPositive: number;
  decision: Decision;
}
