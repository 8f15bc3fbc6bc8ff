// @vitest-environment jsdom
//
// Scripted end-to-end session against a LIVE backend with a trained desk
// checkpoint. Drives the real App (DOM + rendering) over real HTTP.
//
// Point SEGSYNTH_API at a running service, e.g.
//   segsynth serve --checkpoint ws/run/ckpt_010000.sschk --port 8765
//   SEGSYNTH_API=http://127.0.0.1:8765 npm run test:e2e
// or use scripts/ui_e2e.py at the repo root, which trains a desk checkpoint,
// starts the service, and runs this suite.
import { beforeAll, describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.ts';
import { initApp, type App } from '../src/app.ts';
import type { CatalogInfo } from '../src/types.ts';
import { installFakeCanvas, lastPainted } from './fakeCanvas.ts';

const BASE = process.env.SEGSYNTH_API;

function rgbaEqualOutside(
  a: Uint8ClampedArray,
  b: Uint8ClampedArray,
  allowed: (pixel: number) => boolean,
): boolean {
  for (let p = 0; p < a.length / 4; p++) {
    if (allowed(p)) continue;
    for (let c = 0; c < 4; c++) {
      if (a[p * 4 + c] !== b[p * 4 + c]) return false;
    }
  }
  return true;
}

/** Map a painted-pixel index back to its map cell (zoom-block downsampling). */
function cellOf(pixel: number, paintedWidth: number, zoom: number, mapWidth: number): number {
  const x = pixel % paintedWidth;
  const y = Math.floor(pixel / paintedWidth);
  return Math.floor(y / zoom) * mapWidth + Math.floor(x / zoom);
}

describe.skipIf(!BASE)('live editing session', () => {
  let app: App;
  let root: HTMLElement;
  let catalog: CatalogInfo;
  let renderAfterRemove: Uint8ClampedArray;
  const canvas = () => root.querySelector('#map') as HTMLCanvasElement;
  const seedInput = () => root.querySelector('#seed') as HTMLInputElement;
  const target = () => root.querySelector('#target') as HTMLSelectElement;

  beforeAll(async () => {
    installFakeCanvas();
    catalog = await new ApiClient(BASE!).catalog();
    root = document.createElement('div');
    document.body.appendChild(root);
    app = await initApp(root, new ApiClient(BASE!));
  });

  it('samples three toggled classes with seed 0, twice, identically', async () => {
    for (const name of catalog.order.slice(0, 3)) {
      (root.querySelector(`input[data-class="${name}"]`) as HTMLInputElement).click();
    }
    seedInput().value = '0';
    await app.onSample();
    expect(app.currentMap()?.label_set.length).toBe(3);
    const first = lastPainted(canvas()).data.slice();

    await app.onSample();
    expect(lastPainted(canvas()).data).toEqual(first);
  });

  it('removing the last-in-order class leaves all other pixels unchanged', async () => {
    const before = lastPainted(canvas());
    const beforeMap = app.currentMap()!;
    const present = catalog.order.filter((n) => beforeMap.label_set.includes(n));
    const last = present[present.length - 1]!;
    const removedIndex = catalog.names.indexOf(last) + 1;

    target().value = last;
    target().dispatchEvent(new Event('change'));
    seedInput().value = '1';
    await app.onEdit('remove');

    const after = lastPainted(canvas());
    expect(app.currentMap()!.label_set).not.toContain(last);
    const ok = rgbaEqualOutside(before.data, after.data, (p) => {
      const cell = cellOf(p, before.width, app.zoom, beforeMap.width);
      return beforeMap.index_map[cell] === removedIndex;
    });
    expect(ok).toBe(true);
    renderAfterRemove = after.data.slice();
  });

  it('restyle changes only the target class region', async () => {
    const beforeMap = app.currentMap()!;
    const present = catalog.order.filter((n) => beforeMap.label_set.includes(n));
    const victim = present[0]!;
    const victimIndex = catalog.names.indexOf(victim) + 1;
    const before = lastPainted(canvas());

    target().value = victim;
    target().dispatchEvent(new Event('change'));
    seedInput().value = '123456';
    await app.onEdit('new_style');

    const after = lastPainted(canvas());
    const afterMap = app.currentMap()!;
    expect(afterMap.label_set).toEqual(beforeMap.label_set);
    const ok = rgbaEqualOutside(before.data, after.data, (p) => {
      const cell = cellOf(p, before.width, app.zoom, beforeMap.width);
      return (
        beforeMap.index_map[cell] === victimIndex || afterMap.index_map[cell] === victimIndex
      );
    });
    expect(ok).toBe(true);
  });

  it('undo reproduces the post-removal render exactly', async () => {
    // history is [remove, restyle]; undo replays the removal alone
    await app.onUndo();
    expect(lastPainted(canvas()).data).toEqual(renderAfterRemove);
  });
});

describe.skipIf(BASE)('live editing session (skipped)', () => {
  it('needs SEGSYNTH_API pointing at a running service', () => {
    expect(BASE).toBeUndefined();
  });
});
