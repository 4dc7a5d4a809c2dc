import { ReviewApi } from './api';
import { ReviewStore } from './store';
import { renderQueue } from './ui';

async function boot(): Promise<void> {
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app container');
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get('session');
  const reviewer = params.get('reviewer') ?? 'anonymous';
  if (!sessionId) {
    root.textContent = 'Open with ?session=<id> (create one via POST /sessions).';
    return;
  }
  const api = new ReviewApi('');
  const store = new ReviewStore(api, sessionId, reviewer);
  renderQueue(root, store);
  await store.load();
}

void boot();
