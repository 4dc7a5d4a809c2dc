// Typed client for the review-service REST API. The UI never invents
// endpoints: everything here maps 1:1 onto the service routes.

export type Decision = 'accept' | 'reject' | 'edit';
export type ItemKind = 'caption' | 'question' | 'answer';

export interface ReviewItem {
  item_id: string;
  item_kind: ItemKind;
  image_id: string;
  image_url: string;
  caption: string | null;
  question?: string;
  answers?: string[];
}

export interface SessionStats {
  reviewed: number;
  accepted: number;
  rejected: number;
  edited: number;
  error_rate_estimate: number;
  margin_at_confidence: number;
}

export interface VerdictPayload {
  item_id: string;
  item_kind: ItemKind;
  decision: Decision;
  reviewer_id: string;
  edited_text?: string;
}

export type VerdictResult =
  | { kind: 'accepted'; stats: SessionStats }
  | { kind: 'duplicate' };

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

export class NetworkError extends Error {}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ReviewApi {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new NetworkError(`review service unreachable: ${String(err)}`);
    }
    return response;
  }

  private async requestJson(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.request(path, init);
    if (!response.ok) {
      throw new ApiError(`${path} -> HTTP ${response.status}`, response.status);
    }
    return response.json();
  }

  async createSession(itemIds: string[], populationSize?: number): Promise<string> {
    const body = JSON.stringify({
      item_ids: itemIds,
      population_size: populationSize ?? itemIds.length,
    });
    const payload = (await this.requestJson('/sessions', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body,
    })) as { session_id: string };
    return payload.session_id;
  }

  async getBatch(sessionId: string, n: number): Promise<{ items: ReviewItem[]; pending: number }> {
    const response = await this.request(`/sessions/${sessionId}/batch?n=${n}`);
    if (response.status === 410) {
      return { items: [], pending: 0 };
    }
    if (!response.ok) {
      throw new ApiError(`batch -> HTTP ${response.status}`, response.status);
    }
    return (await response.json()) as { items: ReviewItem[]; pending: number };
  }

  async getStats(sessionId: string): Promise<SessionStats> {
    return (await this.requestJson(`/sessions/${sessionId}/stats`)) as SessionStats;
  }

  // A 409 means the server already holds a verdict for this item; the UI
  // treats that as success so a retried or double-submitted verdict can
  // never duplicate.
  async postVerdict(sessionId: string, verdict: VerdictPayload): Promise<VerdictResult> {
    const response = await this.request(`/sessions/${sessionId}/verdicts`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(verdict),
    });
    if (response.status === 409) {
      return { kind: 'duplicate' };
    }
    if (!response.ok) {
      throw new ApiError(`verdict -> HTTP ${response.status}`, response.status);
    }
    return { kind: 'accepted', stats: (await response.json()) as SessionStats };
  }
}
