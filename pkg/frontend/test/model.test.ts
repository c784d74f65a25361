import { describe, expect, it } from 'vitest';

import { buildScreenModel, describeReason, formatLabel, parseNewLabel } from '../src/model';
import { ReviewTask } from '../src/types';

function task(overrides: Partial<ReviewTask>): ReviewTask {
  return {
    format: 1,
    item_id: 'item-1',
    round: 1,
    payload: 'some text',
    previous_human_label: 'A',
    model_reference: 'B',
    reason: { kind: 'label-mismatch', predicted: 'B', human: 'A' },
    mode: 'open',
    queue_position: 0,
    ...overrides,
  };
}

describe('formatLabel', () => {
  it('renders class names and outputs verbatim', () => {
    expect(formatLabel('classification', 'cat')).toBe('cat');
    expect(formatLabel('generation', 'the reply')).toBe('the reply');
  });

  it('renders span and box lists', () => {
    expect(formatLabel('tagging', [{ start: 0, end: 2, entity_class: 'PER' }])).toBe(
      'PER[0:2]',
    );
    expect(formatLabel('tagging', [])).toBe('(no spans)');
    expect(
      formatLabel('detection', [
        { x_min: 0, y_min: 0, x_max: 2, y_max: 2, object_class: 'car' },
      ]),
    ).toBe('car (0, 0) – (2, 2)');
  });
});

describe('describeReason', () => {
  it('summarizes each reason kind', () => {
    expect(describeReason({ kind: 'label-mismatch', predicted: 'B', human: 'A' })).toContain(
      '"B"',
    );
    expect(
      describeReason({
        kind: 'span-mismatch',
        entity_class: 'PER',
        missing_spans: [{ start: 0, end: 1, entity_class: 'PER' }],
        spurious_spans: [],
      }),
    ).toContain('PER');
    expect(
      describeReason({ kind: 'generation-mismatch', metric: 'common-token', value: 0 }),
    ).toContain('no token shared');
  });
});

describe('buildScreenModel', () => {
  it('always exposes both references, previous first', () => {
    const model = buildScreenModel('classification', task({}));
    expect(model.cards[0].role).toBe('previous');
    expect(model.cards[1].role).toBe('model');
    expect(model.cards[0].body).toBe('A');
    expect(model.cards[1].body).toBe('B');
  });

  it('choice mode still offers exactly two primary actions', () => {
    const generation = buildScreenModel(
      'generation',
      task({
        payload: 'input words',
        previous_human_label: 'origin output',
        model_reference: 'model output',
        mode: 'choice',
        reason: { kind: 'generation-mismatch', metric: 'common-token', value: 0 },
      }),
    );
    expect(generation.actions).toHaveLength(2);
    expect(generation.allowsNewLabel).toBe(false);
    expect(generation.sideBySide).toBe(true);
    expect(generation.cards[0].body).toBe('origin output');
    expect(generation.cards[1].body).toBe('model output');
  });

  it('open mode additionally accepts a free-form label', () => {
    const model = buildScreenModel('classification', task({ mode: 'open' }));
    expect(model.actions).toHaveLength(2);
    expect(model.allowsNewLabel).toBe(true);
  });

  it('marks tagging payload tokens per reference spans', () => {
    const model = buildScreenModel(
      'tagging',
      task({
        payload: 'alpha beta gamma',
        previous_human_label: [{ start: 0, end: 2, entity_class: 'PER' }],
        model_reference: [{ start: 1, end: 2, entity_class: 'PER' }],
        mode: 'choice',
        reason: {
          kind: 'span-mismatch',
          entity_class: 'PER',
          missing_spans: [{ start: 0, end: 2, entity_class: 'PER' }],
          spurious_spans: [{ start: 1, end: 2, entity_class: 'PER' }],
        },
      }),
    );
    const [previous, model_] = model.cards;
    expect(previous.tokens!.map((t) => t.marks)).toEqual([['prev'], ['prev'], []]);
    expect(model_.tokens!.map((t) => t.marks)).toEqual([[], ['model'], []]);
  });

  it('renders ctr payload feature maps sorted by name', () => {
    const model = buildScreenModel(
      'ctr',
      task({ payload: { f1: 2, f0: 1 }, previous_human_label: 1, model_reference: 0 }),
    );
    expect(model.payloadText).toBe('f0: 1, f1: 2');
  });
});

describe('parseNewLabel', () => {
  it('passes text labels through and parses structured ones as JSON', () => {
    expect(parseNewLabel('classification', ' cat ')).toBe('cat');
    expect(parseNewLabel('ctr', '1')).toBe(1);
    expect(parseNewLabel('tagging', '[{"start":0,"end":1,"entity_class":"PER"}]')).toEqual([
      { start: 0, end: 1, entity_class: 'PER' },
    ]);
  });
});
