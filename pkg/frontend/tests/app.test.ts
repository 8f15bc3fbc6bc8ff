// @vitest-environment jsdom
import { beforeAll, describe, expect, it } from 'vitest';

import { ApiError, type ApiClient } from '../src/api.ts';
import { initApp } from '../src/app.ts';
import type { EditKind, MapPayload } from '../src/types.ts';
import { installFakeCanvas, lastPainted } from './fakeCanvas.ts';

const NAMES = ['torso', 'head', 'garment'];
const PALETTE: [number, number, number][] = [
  [200, 80, 80],
  [240, 200, 160],
  [110, 200, 110],
];

/** Deterministic fake service: pixel content is a hash of the label-set,
 * per-class style counters, and the seed, so equal requests render equally
 * and distinct seeds render differently. */
function fakeService() {
  interface SessionState {
    labels: string[];
    styles: Map<string, number>;
  }
  const sessions = new Map<string, SessionState>();
  let counter = 0;

  function payload(state: SessionState, seed: number): MapPayload {
    const index_map = new Array<number>(16).fill(0);
    for (const [i, name] of NAMES.entries()) {
      if (!state.labels.includes(name)) continue;
      const style = state.styles.get(name) ?? 0;
      // four cells per class, shifted by the style counter and seed
      for (let j = 0; j < 4; j++) {
        index_map[(i * 4 + j + style + seed) % 16] = i + 1;
      }
    }
    return {
      width: 4,
      height: 4,
      label_set: NAMES.filter((n) => state.labels.includes(n)),
      channels: {},
      index_map,
      seed,
    };
  }

  return {
    async catalog() {
      return { names: NAMES, palette: PALETTE, resolution: [4, 4], order: NAMES };
    },
    async createSession(labels: string[], seed: number) {
      const id = `s${counter++}`;
      const state = { labels: [...labels], styles: new Map() };
      sessions.set(id, state);
      return { session: id, map: payload(state, seed) };
    },
    async edit(session: string, kind: EditKind, target: string, seed: number) {
      const state = sessions.get(session)!;
      const present = state.labels.includes(target);
      if (kind === 'add' && present) {
        throw new ApiError(409, 'conflict', `class '${target}' is already in the label-set`);
      }
      if (kind !== 'add' && !present) {
        throw new ApiError(409, 'conflict', `class '${target}' is not in the label-set`);
      }
      if (kind === 'remove') state.labels = state.labels.filter((n) => n !== target);
      if (kind === 'add') state.labels.push(target);
      if (kind === 'new_style') state.styles.set(target, seed);
      return { session, map: payload(state, seed) };
    },
  } as unknown as ApiClient;
}

function mount() {
  const root = document.createElement('div');
  document.body.appendChild(root);
  return initApp(root, fakeService()).then((app) => ({ app, root }));
}

beforeAll(() => {
  installFakeCanvas();
});

describe('editor app', () => {
  it('builds a toggle per class with palette swatches', async () => {
    const { root } = await mount();
    const toggles = root.querySelectorAll('input[type=checkbox]');
    expect(toggles.length).toBe(3);
    expect(root.querySelectorAll('.swatch').length).toBeGreaterThanOrEqual(3);
  });

  it('sample with no toggles renders a blank canvas', async () => {
    const { app, root } = await mount();
    await app.onSample();
    const canvas = root.querySelector('#map') as HTMLCanvasElement;
    const { data } = lastPainted(canvas);
    // every pixel is background
    for (let i = 0; i < data.length; i += 4) {
      expect([data[i], data[i + 1], data[i + 2]]).toEqual([24, 24, 28]);
    }
  });

  it('same seed renders identically, new seed differs', async () => {
    const { app, root } = await mount();
    (root.querySelectorAll('input[type=checkbox]')[0] as HTMLInputElement).click();
    (root.querySelectorAll('input[type=checkbox]')[1] as HTMLInputElement).click();
    await app.onSample();
    const canvas = root.querySelector('#map') as HTMLCanvasElement;
    const first = lastPainted(canvas).data.slice();
    await app.onSample();
    expect(lastPainted(canvas).data).toEqual(first);
    (root.querySelector('#seed') as HTMLInputElement).value = '99';
    await app.onSample();
    expect(lastPainted(canvas).data).not.toEqual(first);
  });

  it('disables illegal edits and enables legal ones', async () => {
    const { app, root } = await mount();
    (root.querySelectorAll('input[type=checkbox]')[0] as HTMLInputElement).click();
    await app.onSample();
    const select = root.querySelector('#target') as HTMLSelectElement;
    select.value = 'torso'; // present
    select.dispatchEvent(new Event('change'));
    expect((root.querySelector('#remove') as HTMLButtonElement).disabled).toBe(false);
    expect((root.querySelector('#add') as HTMLButtonElement).disabled).toBe(true);
    select.value = 'head'; // absent
    select.dispatchEvent(new Event('change'));
    expect((root.querySelector('#remove') as HTMLButtonElement).disabled).toBe(true);
    expect((root.querySelector('#add') as HTMLButtonElement).disabled).toBe(false);
  });

  it('surfaces server conflicts inline', async () => {
    const { app, root } = await mount();
    (root.querySelectorAll('input[type=checkbox]')[0] as HTMLInputElement).click();
    await app.onSample();
    const select = root.querySelector('#target') as HTMLSelectElement;
    select.value = 'torso';
    await app.onEdit('add'); // illegal: already present
    expect((root.querySelector('#status') as HTMLElement).textContent).toContain('conflict');
  });

  it('undo reproduces the previous rendering through replay', async () => {
    const { app, root } = await mount();
    const boxes = root.querySelectorAll('input[type=checkbox]');
    (boxes[0] as HTMLInputElement).click();
    (boxes[1] as HTMLInputElement).click();
    await app.onSample();
    const canvas = root.querySelector('#map') as HTMLCanvasElement;

    const select = root.querySelector('#target') as HTMLSelectElement;
    select.value = 'head';
    await app.onEdit('remove');
    const afterRemove = lastPainted(canvas).data.slice();

    (root.querySelector('#seed') as HTMLInputElement).value = '7';
    select.value = 'garment';
    await app.onEdit('add');
    expect(lastPainted(canvas).data).not.toEqual(afterRemove);

    await app.onUndo();
    expect(lastPainted(canvas).data).toEqual(afterRemove);
    expect(app.currentMap()?.label_set).not.toContain('garment');
  });

  it('history panel lists the recorded operations with seeds', async () => {
    const { app, root } = await mount();
    (root.querySelectorAll('input[type=checkbox]')[0] as HTMLInputElement).click();
    await app.onSample();
    const select = root.querySelector('#target') as HTMLSelectElement;
    select.value = 'head';
    await app.onEdit('add');
    const items = [...root.querySelectorAll('#history li')].map((li) => li.textContent);
    expect(items[0]).toContain('sample');
    expect(items[1]).toContain('add head');
  });
});
