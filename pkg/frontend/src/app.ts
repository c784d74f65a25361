// Review session controller: lease -> render -> decide -> advance.
//
// Every POSTed decision corresponds to one explicit user action (a button
// click or keyboard shortcut); the controller never fabricates one. A 409 on
// submit means the lease was lost, so the current task is silently
// re-fetched without a duplicate decision.

import { ApiError, ReviewApi } from './api';
import { buildScreenModel, parseNewLabel, ScreenModel } from './model';
import {
  renderCompletion,
  renderFatal,
  renderProgress,
  renderTask,
  showInlineError,
} from './render';
import { Choice, Label, ReviewTask, StoreState } from './types';

export interface AppConfig {
  baseUrl: string;
  annotator: string;
  root: HTMLElement;
  /** decision timestamps, unix seconds; injectable for tests */
  now?: () => number;
}

export class ReviewApp {
  readonly api: ReviewApi;
  private readonly annotator: string;
  private readonly root: HTMLElement;
  private readonly now: () => number;
  private storeState: StoreState | null = null;
  private current: ReviewTask | null = null;
  private screen: HTMLElement | null = null;
  private submitting = false;

  constructor(config: AppConfig) {
    this.api = new ReviewApi(config.baseUrl);
    this.annotator = config.annotator;
    this.root = config.root;
    this.now = config.now ?? (() => Date.now() / 1000);
  }

  get currentTask(): ReviewTask | null {
    return this.current;
  }

  async start(): Promise<void> {
    try {
      this.storeState = await this.api.state();
    } catch (error) {
      this.root.replaceChildren(renderFatal(`Cannot reach the review service: ${error}`));
      return;
    }
    await this.fetchNext();
  }

  async fetchNext(): Promise<void> {
    if (!this.storeState?.open_round) {
      this.root.replaceChildren(renderFatal('No open review round.'));
      return;
    }
    let task: ReviewTask | null;
    try {
      task = await this.api.nextTask(this.annotator);
    } catch (error) {
      this.root.replaceChildren(renderFatal(String(error)));
      return;
    }
    this.current = task;
    if (task === null) {
      const stats = await this.api.stats(this.storeState.open_round).catch(() => null);
      this.root.replaceChildren(renderCompletion(stats));
      return;
    }
    const model: ScreenModel = buildScreenModel(this.storeState.task, task);
    this.screen = renderTask(model, {
      onChoice: (choice) => void this.decide(choice),
      onNewLabel: (text) => void this.decideNewLabel(text),
    });
    const stats = await this.api.stats(this.storeState.open_round).catch(() => null);
    this.root.replaceChildren(this.screen);
    if (stats) {
      this.root.prepend(renderProgress(stats));
    }
  }

  async decide(choice: Choice, newLabel: Label | null = null): Promise<void> {
    if (!this.current || this.submitting) {
      return;
    }
    this.submitting = true;
    try {
      await this.api.submit({
        format: 1,
        item_id: this.current.item_id,
        round: this.current.round,
        annotator_id: this.annotator,
        choice,
        new_label: newLabel,
        submitted_at: this.now(),
      });
      await this.fetchNext();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // lease expired and was retaken: drop the task, fetch a fresh one
        await this.fetchNext();
      } else if (error instanceof ApiError && error.status === 422 && this.screen) {
        showInlineError(this.screen, error.message);
      } else {
        this.root.replaceChildren(renderFatal(String(error)));
      }
    } finally {
      this.submitting = false;
    }
  }

  private async decideNewLabel(text: string): Promise<void> {
    if (!this.current || !this.storeState) {
      return;
    }
    let label: Label;
    try {
      label = parseNewLabel(this.storeState.task, text);
    } catch {
      if (this.screen) {
        showInlineError(this.screen, 'Could not parse the new label.');
      }
      return;
    }
    await this.decide('new_label', label);
  }

  /** Keyboard shortcuts: 1 = keep previous, 2 = accept model, e = edit. */
  handleKey(event: KeyboardEvent): void {
    if (!this.current) {
      return;
    }
    const target = event.target as HTMLElement | null;
    if (target && target.tagName === 'INPUT') {
      return;
    }
    if (event.key === '1') {
      void this.decide('keep_previous');
    } else if (event.key === '2') {
      void this.decide('accept_model');
    } else if (event.key === 'e') {
      this.root.querySelector<HTMLInputElement>('input.new-label')?.focus();
      event.preventDefault();
    }
  }
}
