// DOM rendering for the review queue: one card per pending item, a stats
// panel, keyboard shortcuts (a = accept, r = reject, e = edit), and a retry
// banner while verdicts wait in the unsent buffer.

import { ReviewItem } from './api';
import { ReviewStore, StoreState } from './store';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderCard(item: ReviewItem, store: ReviewStore): HTMLElement {
  const card = el('article', { class: 'card', 'data-item-id': item.item_id });
  card.appendChild(el('img', { src: item.image_url, alt: item.image_id, class: 'thumb' }));
  const body = el('div', { class: 'card-body' });
  body.appendChild(el('h3', {}, `${item.item_kind}: ${item.item_id}`));
  if (item.caption) body.appendChild(el('p', { class: 'caption' }, item.caption));
  if (item.question) body.appendChild(el('p', { class: 'question' }, item.question));
  if (item.answers?.length) {
    const list = el('ol', { class: 'answers' });
    for (const answer of item.answers) list.appendChild(el('li', {}, answer));
    body.appendChild(list);
  }

  const error = el('p', { class: 'error', hidden: '' });
  const editBox = el('textarea', {
    class: 'edit-text',
    placeholder: 'corrected text',
    hidden: '',
  });

  const act = (decision: 'accept' | 'reject' | 'edit') => {
    if (decision === 'edit' && editBox.hidden) {
      editBox.hidden = false;
      editBox.focus();
      return;
    }
    const result = store.decide(
      item.item_id,
      decision,
      decision === 'edit' ? editBox.value : undefined,
    );
    if (!result.ok) {
      error.hidden = false;
      error.textContent = result.error;
    }
  };

  const controls = el('div', { class: 'controls' });
  const acceptBtn = el('button', { class: 'accept', 'data-action': 'accept' }, 'Accept (a)');
  const rejectBtn = el('button', { class: 'reject', 'data-action': 'reject' }, 'Reject (r)');
  const editBtn = el('button', { class: 'edit', 'data-action': 'edit' }, 'Edit (e)');
  acceptBtn.addEventListener('click', () => act('accept'));
  rejectBtn.addEventListener('click', () => act('reject'));
  editBtn.addEventListener('click', () => act('edit'));
  controls.append(acceptBtn, rejectBtn, editBtn);

  body.append(controls, editBox, error);
  card.appendChild(body);
  return card;
}

function renderStats(state: StoreState): HTMLElement {
  const panel = el('aside', { class: 'stats', 'data-testid': 'stats-panel' });
  const stats = state.stats;
  panel.appendChild(el('h2', {}, 'Session'));
  const rows: [string, string][] = stats
    ? [
        ['reviewed', String(stats.reviewed)],
        ['accepted', String(stats.accepted)],
        ['rejected', String(stats.rejected)],
        ['edited', String(stats.edited)],
        ['error rate', stats.reviewed ? (stats.error_rate_estimate * 100).toFixed(1) + '%' : '-'],
      ]
    : [['reviewed', '0']];
  for (const [label, value] of rows) {
    const row = el('div', { class: 'stat-row' });
    row.appendChild(el('span', { class: 'label' }, label));
    row.appendChild(el('span', { class: 'value', 'data-stat': label }, value));
    panel.appendChild(row);
  }
  panel.appendChild(el('p', { class: 'pending-count' }, `${state.items.length} pending`));
  return panel;
}

export function renderQueue(container: HTMLElement, store: ReviewStore): () => void {
  const onKey = (event: KeyboardEvent) => {
    const target = event.target as HTMLElement | null;
    if (target && (target.tagName === 'TEXTAREA' || target.tagName === 'INPUT')) return;
    const first = store.state().items[0];
    if (!first) return;
    if (event.key === 'a') store.decide(first.item_id, 'accept');
    else if (event.key === 'r') store.decide(first.item_id, 'reject');
    else if (event.key === 'e') {
      const card = container.querySelector<HTMLElement>(
        `[data-item-id="${CSS.escape(first.item_id)}"] button.edit`,
      );
      card?.click();
    }
  };

  const draw = (state: StoreState) => {
    container.textContent = '';
    const banner = el('div', { class: 'banner', 'data-testid': 'retry-banner' });
    if (state.offline) {
      banner.appendChild(
        el('span', {}, `offline: ${state.unsentCount} verdict(s) waiting to send`),
      );
      const retryBtn = el('button', { class: 'retry' }, 'Retry');
      retryBtn.addEventListener('click', () => void store.retry());
      banner.appendChild(retryBtn);
    } else {
      banner.hidden = true;
    }
    container.appendChild(banner);
    container.appendChild(renderStats(state));
    const list = el('section', { class: 'queue', 'data-testid': 'queue' });
    if (state.items.length === 0 && !state.loading) {
      list.appendChild(el('p', { class: 'done' }, 'No pending items.'));
    }
    for (const item of state.items) list.appendChild(renderCard(item, store));
    container.appendChild(list);
  };

  const unsubscribe = store.subscribe(draw);
  document.addEventListener('keydown', onKey);
  draw(store.state());
  return () => {
    unsubscribe();
    document.removeEventListener('keydown', onKey);
  };
}
