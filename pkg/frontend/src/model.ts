// Pure screen-model construction: turns a ReviewTask into the exact content
// the renderer shows. Both references (model prediction and previous human
// label) are always present; choice mode exposes exactly two primary actions.

import {
  BoxLabel,
  FlagReason,
  Label,
  ReviewMode,
  ReviewTask,
  SpanLabel,
  TaskKind,
} from './types';

export interface TokenView {
  text: string;
  /** highlight markers: 'prev' (previous human span), 'model' (model span) */
  marks: string[];
}

export interface ReferenceCard {
  role: 'previous' | 'model';
  title: string;
  body: string;
  /** tagging only: the payload tokens with this reference's span marks */
  tokens?: TokenView[];
}

export interface ScreenModel {
  kind: TaskKind;
  itemId: string;
  round: number;
  position: number;
  mode: ReviewMode;
  payloadTitle: string;
  payloadText: string;
  /** generation renders the two references side by side as selectable cards */
  sideBySide: boolean;
  cards: [ReferenceCard, ReferenceCard];
  reasonText: string;
  /** primary decision actions, exactly two in choice mode */
  actions: { choice: 'keep_previous' | 'accept_model'; label: string }[];
  /** open mode additionally accepts a typed replacement label */
  allowsNewLabel: boolean;
}

function isSpanArray(label: Label): label is SpanLabel[] {
  return Array.isArray(label) && (label.length === 0 || 'entity_class' in (label[0] as object));
}

function isBoxArray(label: Label): label is BoxLabel[] {
  return Array.isArray(label) && (label.length === 0 || 'object_class' in (label[0] as object));
}

export function formatLabel(kind: TaskKind, label: Label): string {
  if (kind === 'tagging' && isSpanArray(label)) {
    if (label.length === 0) {
      return '(no spans)';
    }
    return label
      .map((span) => `${span.entity_class}[${span.start}:${span.end}]`)
      .join(', ');
  }
  if (kind === 'detection' && isBoxArray(label)) {
    if (label.length === 0) {
      return '(no boxes)';
    }
    return label
      .map(
        (box) =>
          `${box.object_class} (${box.x_min}, ${box.y_min}) – (${box.x_max}, ${box.y_max})`,
      )
      .join('\n');
  }
  return String(label);
}

export function describeReason(reason: FlagReason): string {
  switch (reason.kind) {
    case 'label-mismatch':
      return `model predicted "${reason.predicted}", human labeled "${reason.human}"`;
    case 'span-mismatch': {
      const missing = (reason.missing_spans as SpanLabel[]) ?? [];
      const spurious = (reason.spurious_spans as SpanLabel[]) ?? [];
      return (
        `${reason.entity_class}: ${missing.length} span(s) only in the human label, ` +
        `${spurious.length} only in the model prediction`
      );
    }
    case 'box-mismatch': {
      const unmatchedHuman = (reason.unmatched_human as number[]) ?? [];
      const unmatchedModel = (reason.unmatched_model as number[]) ?? [];
      const lowPairs = (reason.low_iou_pairs as [number, number, number][]) ?? [];
      const parts: string[] = [];
      if (unmatchedHuman.length) parts.push(`${unmatchedHuman.length} human box(es) unmatched`);
      if (unmatchedModel.length) parts.push(`${unmatchedModel.length} model box(es) unmatched`);
      if (lowPairs.length) parts.push(`${lowPairs.length} pair(s) below the IoU threshold`);
      return parts.join(', ') || 'box disagreement';
    }
    case 'generation-mismatch':
      return reason.metric === 'common-token'
        ? 'no token shared between the model output and the labeled output'
        : `BLEU ${Number(reason.value).toFixed(3)} below threshold`;
    case 'ctr-disagreement':
      return `score ${reason.score} vs label ${reason.label}`;
    default:
      return reason.kind;
  }
}

function markedTokens(payload: string, spans: SpanLabel[], mark: string): TokenView[] {
  const tokens = payload.split(/\s+/).filter((t) => t.length > 0);
  const views = tokens.map((text) => ({ text, marks: [] as string[] }));
  for (const span of spans) {
    for (let i = span.start; i < span.end && i < views.length; i++) {
      views[i].marks.push(mark);
    }
  }
  return views;
}

const PAYLOAD_TITLES: Record<TaskKind, string> = {
  classification: 'Text',
  tagging: 'Sentence',
  detection: 'Image reference',
  generation: 'Input sentence',
  ctr: 'Features',
};

function payloadText(payload: unknown): string {
  if (typeof payload === 'string') {
    return payload;
  }
  // ctr payloads are feature maps; render sorted name:value pairs
  const record = payload as Record<string, number>;
  return Object.keys(record)
    .sort()
    .map((name) => `${name}: ${record[name]}`)
    .join(', ');
}

export function buildScreenModel(kind: TaskKind, task: ReviewTask): ScreenModel {
  const previous: ReferenceCard = {
    role: 'previous',
    title: kind === 'generation' ? 'Previous human output (origin)' : 'Previous human label',
    body: formatLabel(kind, task.previous_human_label),
  };
  const model: ReferenceCard = {
    role: 'model',
    title: kind === 'generation' ? 'Model output' : 'Model prediction',
    body: formatLabel(kind, task.model_reference),
  };
  if (kind === 'tagging') {
    previous.tokens = markedTokens(
      task.payload as string,
      task.previous_human_label as SpanLabel[],
      'prev',
    );
    model.tokens = markedTokens(
      task.payload as string,
      task.model_reference as SpanLabel[],
      'model',
    );
  }
  return {
    kind,
    itemId: task.item_id,
    round: task.round,
    position: task.queue_position,
    mode: task.mode,
    payloadTitle: PAYLOAD_TITLES[kind],
    payloadText: payloadText(task.payload),
    sideBySide: kind === 'generation',
    cards: [previous, model],
    reasonText: describeReason(task.reason),
    actions: [
      { choice: 'keep_previous', label: kind === 'generation' ? 'Keep origin output' : 'Keep previous label' },
      { choice: 'accept_model', label: kind === 'generation' ? 'Use model output' : 'Accept model prediction' },
    ],
    allowsNewLabel: task.mode === 'open',
  };
}

/** Parse the free-form label typed in open mode into the wire shape. */
export function parseNewLabel(kind: TaskKind, text: string): Label {
  const trimmed = text.trim();
  if (kind === 'classification' || kind === 'generation') {
    return trimmed;
  }
  if (kind === 'ctr') {
    return Number(trimmed);
  }
  // tagging/detection open relabels are entered as JSON
  return JSON.parse(trimmed) as Label;
}
