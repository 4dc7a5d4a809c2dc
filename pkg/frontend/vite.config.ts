import { defineConfig } from 'vitest/config';

// Dev server proxies API calls to a locally running review-service
// (foundry serve-review --port 8099), so the UI is same-origin in both
// dev and production.
export default defineConfig({
  server: {
    proxy: {
      '/sessions': 'http://127.0.0.1:8099',
      '/items': 'http://127.0.0.1:8099',
    },
  },
  test: {
    environment: 'node',
    include: ['tests/**/*.test.ts'],
    testTimeout: 20000,
    hookTimeout: 30000,
  },
});
