// Thin fetch client for the review service. The UI talks only to this
// contract; it never reads the store directly.

import { ReviewDecision, ReviewTask, RoundStats, StoreState, SubmitAck } from './types';

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

async function errorMessage(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { error?: string };
    return body.error ?? response.statusText;
  } catch {
    return response.statusText;
  }
}

export class ReviewApi {
  private readonly root: string;

  constructor(baseUrl: string) {
    this.root = baseUrl.replace(/\/+$/, '') + '/api/v1';
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.root + path);
    if (!response.ok) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    return (await response.json()) as T;
  }

  async state(): Promise<StoreState> {
    return this.getJson<StoreState>('/state');
  }

  /** Lease the next task; null when the queue is exhausted (204). */
  async nextTask(annotator: string): Promise<ReviewTask | null> {
    const response = await fetch(
      `${this.root}/queue/next?annotator=${encodeURIComponent(annotator)}`,
    );
    if (response.status === 204) {
      return null;
    }
    if (!response.ok) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    return (await response.json()) as ReviewTask;
  }

  async submit(decision: ReviewDecision): Promise<SubmitAck> {
    const response = await fetch(`${this.root}/decision`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(decision),
    });
    if (!response.ok) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    return (await response.json()) as SubmitAck;
  }

  async stats(round: number): Promise<RoundStats> {
    return this.getJson<RoundStats>(`/rounds/${round}/stats`);
  }
}
