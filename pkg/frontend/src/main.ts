import { ApiClient } from './api.ts';
import { initApp } from './app.ts';

const api = new ApiClient(
  new URLSearchParams(location.search).get('api') ?? 'http://127.0.0.1:8765',
);

const root = document.getElementById('app');
if (!root) throw new Error('missing #app element');

initApp(root, api).catch((err) => {
  root.textContent = `failed to reach the service: ${err}`;
});
