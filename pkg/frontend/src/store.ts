// Client-side session state: pending cards, optimistic decisions, an
// unsent-verdict buffer for offline resilience, and server-confirmed stats.
//
// Invariants:
//  * a verdict is sent at most once per item (local de-dup + 409-as-success)
//  * the stats panel always reflects the server's stats after the last
//    confirmed verdict
//  * verdicts are never lost: on network failure they wait in the buffer
//    until a retry succeeds

import {
  Decision,
  NetworkError,
  ReviewApi,
  ReviewItem,
  SessionStats,
  VerdictPayload,
} from './api';

export type DecideResult =
  | { ok: true }
  | { ok: false; error: string };

export interface StoreState {
  items: ReviewItem[];
  stats: SessionStats | null;
  offline: boolean;
  unsentCount: number;
  loading: boolean;
}

type Listener = (state: StoreState) => void;

export class ReviewStore {
  private items: ReviewItem[] = [];
  private decided = new Set<string>();
  private unsent: VerdictPayload[] = [];
  private stats: SessionStats | null = null;
  private offline = false;
  private loading = false;
  private flushing = false;
  private listeners: Listener[] = [];

  constructor(
    private readonly api: ReviewApi,
    private readonly sessionId: string,
    private readonly reviewerId: string,
  ) {}

  state(): StoreState {
    return {
      items: [...this.items],
      stats: this.stats,
      offline: this.offline,
      unsentCount: this.unsent.length,
      loading: this.loading,
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    const snapshot = this.state();
    for (const listener of this.listeners) listener(snapshot);
  }

  async load(batchSize = 50): Promise<void> {
    this.loading = true;
    this.emit();
    try {
      const [batch, stats] = await Promise.all([
        this.api.getBatch(this.sessionId, batchSize),
        this.api.getStats(this.sessionId),
      ]);
      this.items = batch.items.filter((item) => !this.decided.has(item.item_id));
      this.stats = stats;
      this.offline = false;
    } catch (err) {
      if (err instanceof NetworkError) {
        this.offline = true;
      } else {
        throw err;
      }
    } finally {
      this.loading = false;
      this.emit();
    }
  }

  /** Record a decision for a card. Optimistic: the card leaves the queue
   * immediately; the verdict is queued and flushed to the server. */
  decide(itemId: string, decision: Decision, editedText?: string): DecideResult {
    if (this.decided.has(itemId)) {
      return { ok: false, error: 'already decided' };
    }
    const item = this.items.find((i) => i.item_id === itemId);
    if (!item) {
      return { ok: false, error: 'unknown item' };
    }
    if (decision === 'edit' && !(editedText ?? '').trim()) {
      return { ok: false, error: 'edited text must not be empty' };
    }
    this.decided.add(itemId);
    this.items = this.items.filter((i) => i.item_id !== itemId);
    const verdict: VerdictPayload = {
      item_id: itemId,
      item_kind: item.item_kind,
      decision,
      reviewer_id: this.reviewerId,
    };
    if (decision === 'edit') {
      verdict.edited_text = (editedText ?? '').trim();
    }
    this.unsent.push(verdict);
    this.emit();
    void this.flush();
    return { ok: true };
  }

  /** Drain the unsent buffer head-first; stops (offline) on network failure
   * without losing anything. Safe to call concurrently. */
  async flush(): Promise<void> {
    if (this.flushing) return;
    this.flushing = true;
    try {
      while (this.unsent.length > 0) {
        const head = this.unsent[0];
        let result;
        try {
          result = await this.api.postVerdict(this.sessionId, head);
        } catch (err) {
          if (err instanceof NetworkError) {
            this.offline = true;
            this.emit();
            return;
          }
          throw err;
        }
        this.unsent.shift();
        this.offline = false;
        if (result.kind === 'accepted') {
          this.stats = result.stats;
        } else {
          this.stats = await this.api.getStats(this.sessionId).catch(() => this.stats);
        }
        this.emit();
      }
    } finally {
      this.flushing = false;
    }
  }

  async retry(): Promise<void> {
    await this.flush();
    if (!this.offline && this.items.length === 0) {
      await this.load();
    }
  }
}
