// @vitest-environment jsdom
//
// End-to-end: the real client stack (api + store + DOM with keyboard
// shortcuts) against a live review-service spawned as a subprocess.

import { ChildProcess, spawn, spawnSync } from 'node:child_process';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ReviewApi } from '../src/api';
import { ReviewStore } from '../src/store';
import { renderQueue } from '../src/ui';

const pythonOk = spawnSync('python3', ['-c', 'import foundry, uvicorn']).status === 0;

let child: ChildProcess | null = null;
let baseUrl = '';
let itemIds: string[] = [];

async function waitForServer(url: string, tries = 100): Promise<void> {
  for (let i = 0; i < tries; i += 1) {
    try {
      const response = await fetch(`${url}/sessions/none/stats`);
      if (response.status === 404) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 100));
  }
  throw new Error(`review service at ${url} never came up`);
}

async function settle(ms = 25): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, ms));
}

describe.skipIf(!pythonOk)('review UI against a live review-service', () => {
  beforeAll(async () => {
    // vitest runs with the project root as cwd; import.meta.url is not a
    // file: URL under the jsdom environment, so don't derive paths from it
    child = spawn('python3', ['scripts/serve_fixture.py', '--images', '2'], {
      cwd: process.cwd(),
      stdio: ['ignore', 'pipe', 'pipe'],
    });
    child.stderr!.on('data', () => {}); // drain; uvicorn logs are noise here
    const info = await new Promise<{ port: number; items: string[] }>((resolve, reject) => {
      let buffer = '';
      const timer = setTimeout(() => reject(new Error('fixture server timed out')), 25000);
      child!.stdout!.on('data', (data: Buffer) => {
        buffer += data.toString();
        const line = buffer.split('\n').find((l) => l.trim().startsWith('{'));
        if (line) {
          clearTimeout(timer);
          resolve(JSON.parse(line));
        }
      });
      child!.on('exit', (code) => reject(new Error(`fixture exited early: ${code}`)));
    });
    baseUrl = `http://127.0.0.1:${info.port}`;
    itemIds = info.items;
    await waitForServer(baseUrl);
  });

  afterAll(() => {
    child?.kill();
  });

  it('completes a 10-item session with shortcuts, no duplicates, stats in sync', async () => {
    expect(itemIds).toHaveLength(10);
    const api = new ReviewApi(baseUrl);
    const sessionId = await api.createSession(itemIds, 6684);
    const store = new ReviewStore(api, sessionId, 'e2e-reviewer');
    const container = document.createElement('div');
    document.body.appendChild(container);
    const dispose = renderQueue(container, store);
    await store.load();
    expect(container.querySelectorAll('.card')).toHaveLength(10);

    const press = (key: string) =>
      document.dispatchEvent(new KeyboardEvent('keydown', { key, bubbles: true }));

    // 7 accepts and 2 rejects via keyboard, stats checked after each verdict
    const script = ['a', 'a', 'r', 'a', 'a', 'r', 'a', 'a', 'a'];
    for (const [index, key] of script.entries()) {
      press(key);
      await settle(60);
      const serverStats = await api.getStats(sessionId);
      expect(serverStats.reviewed).toBe(index + 1);
      expect(store.state().stats).toEqual(serverStats);
    }

    // final card: edit via the buttons, double-clicking everything
    const card = container.querySelector<HTMLElement>('.card')!;
    const editButton = card.querySelector<HTMLButtonElement>('button.edit')!;
    editButton.click();
    const textarea = card.querySelector<HTMLTextAreaElement>('textarea.edit-text')!;
    textarea.value = 'What hazard does the reduced visibility create?';
    editButton.click();
    editButton.click(); // double submit
    await settle(120);

    const finalStats = await api.getStats(sessionId);
    expect(finalStats.reviewed).toBe(10);
    expect(finalStats.rejected).toBe(2);
    expect(finalStats.edited).toBe(1);
    expect(finalStats.accepted).toBe(7);
    expect(finalStats.error_rate_estimate).toBeCloseTo(0.3, 10);
    expect(store.state().stats).toEqual(finalStats);
    expect(store.state().items).toHaveLength(0);

    // double-click insurance server-side: re-posting every verdict bounces
    for (const itemId of itemIds) {
      const result = await api.postVerdict(sessionId, {
        item_id: itemId,
        item_kind: 'question',
        decision: 'accept',
        reviewer_id: 'e2e-reviewer',
      });
      expect(result.kind).toBe('duplicate');
    }
    const afterDup = await api.getStats(sessionId);
    expect(afterDup).toEqual(finalStats);

    dispose();
  });
});
