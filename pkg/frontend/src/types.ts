// Wire types mirroring the service's /api/v1 JSON contract.

export type TaskKind = 'classification' | 'tagging' | 'detection' | 'generation' | 'ctr';

export interface SpanLabel {
  start: number;
  end: number;
  entity_class: string;
}

export interface BoxLabel {
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
  object_class: string;
}

// classification/generation labels are strings, ctr labels 0|1,
// tagging labels span lists, detection labels box lists
export type Label = string | number | SpanLabel[] | BoxLabel[];

export type ReviewMode = 'choice' | 'open';

export interface FlagReason {
  kind: string;
  [field: string]: unknown;
}

export interface ReviewTask {
  format: number;
  item_id: string;
  round: number;
  payload: unknown;
  previous_human_label: Label;
  model_reference: Label;
  reason: FlagReason;
  mode: ReviewMode;
  queue_position: number;
}

export type Choice = 'keep_previous' | 'accept_model' | 'new_label';

export interface ReviewDecision {
  format: 1;
  item_id: string;
  round: number;
  annotator_id: string;
  choice: Choice;
  new_label: Label | null;
  submitted_at: number;
}

export interface SubmitAck {
  status: string;
  duplicate: boolean;
}

export interface ReasonStats {
  queued: number;
  decided: number;
}

export interface RoundStats {
  round: number;
  queued: number;
  decided: number;
  leased: number;
  remaining: number;
  by_reason: Record<string, ReasonStats>;
}

export interface StoreState {
  task: TaskKind;
  round: number;
  open_round: number | null;
  current_version: string;
}
