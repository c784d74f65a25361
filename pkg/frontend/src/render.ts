// DOM construction for the review screens. Everything is built with
// createElement/textContent, so task payloads can never inject markup.

import { ScreenModel, TokenView } from './model';
import { RoundStats } from './types';

export interface DecisionHandlers {
  onChoice(choice: 'keep_previous' | 'accept_model'): void;
  onNewLabel(text: string): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function tokenLine(tokens: TokenView[]): HTMLElement {
  const line = el('p', 'tokens');
  tokens.forEach((token, i) => {
    if (i > 0) line.append(' ');
    const span = el('span', token.marks.map((m) => `mark-${m}`).join(' ') || undefined);
    span.textContent = token.text;
    line.append(span);
  });
  return line;
}

export function renderTask(model: ScreenModel, handlers: DecisionHandlers): HTMLElement {
  const root = el('section', 'task');
  root.dataset.itemId = model.itemId;
  root.dataset.mode = model.mode;

  const header = el('header');
  header.append(
    el('h2', undefined, `Item ${model.itemId}`),
    el('p', 'reason', `Flagged: ${model.reasonText}`),
  );
  root.append(header);

  const payload = el('div', 'payload');
  payload.append(el('h3', undefined, model.payloadTitle));
  payload.append(el('p', undefined, model.payloadText));
  root.append(payload);

  // both references are rendered before any decision control exists
  const references = el('div', model.sideBySide ? 'references side-by-side' : 'references');
  for (const card of model.cards) {
    const cardNode = el('article', `reference ${card.role}`);
    cardNode.append(el('h3', undefined, card.title));
    if (card.tokens) {
      cardNode.append(tokenLine(card.tokens));
    }
    cardNode.append(el('pre', 'label-body', card.body));
    references.append(cardNode);
  }
  root.append(references);

  const controls = el('div', 'controls');
  model.actions.forEach((action, i) => {
    const button = el('button', 'primary', `${action.label} [${i + 1}]`);
    button.dataset.choice = action.choice;
    button.addEventListener('click', () => handlers.onChoice(action.choice));
    controls.append(button);
  });
  if (model.allowsNewLabel) {
    const editor = el('div', 'editor');
    const input = el('input') as HTMLInputElement;
    input.type = 'text';
    input.placeholder = 'New label [e]';
    input.className = 'new-label';
    const submit = el('button', undefined, 'Relabel');
    submit.dataset.choice = 'new_label';
    submit.addEventListener('click', () => handlers.onNewLabel(input.value));
    editor.append(input, submit);
    controls.append(editor);
  }
  root.append(controls);

  const error = el('p', 'inline-error');
  error.hidden = true;
  root.append(error);
  return root;
}

export function renderCompletion(stats: RoundStats | null): HTMLElement {
  const root = el('section', 'completion');
  root.append(el('h2', undefined, 'Queue empty'));
  if (stats) {
    root.append(
      el(
        'p',
        'round-summary',
        `Round ${stats.round}: ${stats.decided} of ${stats.queued} decided, ` +
          `${stats.remaining} remaining, ${stats.leased} leased elsewhere.`,
      ),
    );
    const list = el('ul', 'by-reason');
    for (const [kind, counts] of Object.entries(stats.by_reason)) {
      list.append(el('li', undefined, `${kind}: ${counts.decided}/${counts.queued}`));
    }
    root.append(list);
  }
  return root;
}

export function renderProgress(stats: RoundStats): HTMLElement {
  const node = el('p', 'progress');
  node.textContent = `Round ${stats.round}: ${stats.decided}/${stats.queued} decided`;
  return node;
}

export function renderFatal(message: string): HTMLElement {
  return el('section', 'fatal', message);
}

export function showInlineError(root: HTMLElement, message: string): void {
  const node = root.querySelector<HTMLElement>('.inline-error');
  if (node) {
    node.textContent = message;
    node.hidden = false;
  }
}
