import { ApiClient, ApiError } from './api.ts';
import { SessionHistory, undo } from './history.ts';
import { cssColor, paintMap } from './render.ts';
import type { CatalogInfo, EditKind, MapPayload } from './types.ts';

/** Single-page editor: label toggles, seeded sampling, remove/add/restyle
 * with undo-by-replay. All pixels shown come from service payloads; the
 * client never mutates map data. At most one request is in flight; controls
 * are disabled while waiting. */
export class App {
  private catalog!: CatalogInfo;
  private session: string | null = null;
  private map: MapPayload | null = null;
  private history: SessionHistory | null = null;
  private busy = false;

  private toggles = new Map<string, HTMLInputElement>();
  private seedInput!: HTMLInputElement;
  private targetSelect!: HTMLSelectElement;
  private canvas!: HTMLCanvasElement;
  private status!: HTMLElement;
  private historyList!: HTMLElement;
  private buttons: Record<string, HTMLButtonElement> = {};

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
  ) {}

  async start(): Promise<void> {
    this.catalog = await this.api.catalog();
    this.buildDom();
    this.refreshControls();
  }

  get zoom(): number {
    const width = this.catalog.resolution[1] ?? 64;
    return Math.max(1, Math.min(12, Math.floor(512 / width)));
  }

  private buildDom(): void {
    this.root.innerHTML = '';
    const grid = el('div', 'editor');

    // label panel
    const panel = el('section', 'panel');
    panel.appendChild(el('h2', '', 'Label-set'));
    for (const [i, name] of this.catalog.names.entries()) {
      const row = el('label', 'toggle');
      const box = document.createElement('input');
      box.type = 'checkbox';
      box.dataset.class = name;
      box.addEventListener('change', () => this.refreshControls());
      const swatch = el('span', 'swatch');
      swatch.style.background = cssColor(this.catalog.palette[i] ?? [0, 0, 0]);
      row.append(box, swatch, el('span', '', name));
      panel.appendChild(row);
      this.toggles.set(name, box);
    }
    const seedRow = el('div', 'seed-row');
    seedRow.appendChild(el('span', '', 'seed'));
    this.seedInput = document.createElement('input');
    this.seedInput.type = 'number';
    this.seedInput.value = '0';
    this.seedInput.id = 'seed';
    const dice = button('new seed', () => {
      this.seedInput.value = String(Math.floor(Math.random() * 1_000_000));
    });
    dice.id = 'dice';
    seedRow.append(this.seedInput, dice);
    panel.appendChild(seedRow);
    this.buttons.sample = button('Sample', () => this.onSample());
    this.buttons.sample.id = 'sample';
    panel.appendChild(this.buttons.sample);
    grid.appendChild(panel);

    // canvas + legend
    const center = el('section', 'panel');
    this.canvas = document.createElement('canvas');
    this.canvas.id = 'map';
    center.appendChild(this.canvas);
    const legend = el('div', 'legend');
    legend.id = 'legend';
    center.appendChild(legend);
    grid.appendChild(center);

    // edit controls
    const edit = el('section', 'panel');
    edit.appendChild(el('h2', '', 'Edit'));
    this.targetSelect = document.createElement('select');
    this.targetSelect.id = 'target';
    for (const name of this.catalog.names) {
      const opt = document.createElement('option');
      opt.value = name;
      opt.textContent = name;
      this.targetSelect.appendChild(opt);
    }
    this.targetSelect.addEventListener('change', () => this.refreshControls());
    edit.appendChild(this.targetSelect);
    this.buttons.remove = button('Remove', () => this.onEdit('remove'));
    this.buttons.add = button('Add', () => this.onEdit('add'));
    this.buttons.restyle = button('New style', () => this.onEdit('new_style'));
    this.buttons.undo = button('Undo', () => this.onUndo());
    for (const key of ['remove', 'add', 'restyle', 'undo'] as const) {
      const b = this.buttons[key]!;
      b.id = key;
      edit.appendChild(b);
    }
    this.historyList = el('ol', 'history');
    this.historyList.id = 'history';
    edit.appendChild(this.historyList);
    grid.appendChild(edit);

    this.status = el('p', 'status');
    this.status.id = 'status';
    this.root.append(grid, this.status);
  }

  selectedLabels(): string[] {
    return this.catalog.names.filter((n) => this.toggles.get(n)?.checked);
  }

  private seed(): number {
    return Number(this.seedInput.value) || 0;
  }

  private async run(action: () => Promise<void>): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    this.status.textContent = '';
    this.refreshControls();
    try {
      await action();
    } catch (err) {
      this.status.textContent =
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    } finally {
      this.busy = false;
      this.refreshControls();
    }
  }

  onSample(): Promise<void> {
    return this.run(async () => {
      const labels = this.selectedLabels();
      const seed = this.seed();
      const res = await this.api.createSession(labels, seed);
      this.session = res.session;
      this.map = res.map;
      this.history = new SessionHistory(labels, seed);
      this.renderMap();
    });
  }

  onEdit(kind: EditKind): Promise<void> {
    return this.run(async () => {
      if (!this.session || !this.history) throw new Error('sample a map first');
      const target = this.targetSelect.value;
      const seed = this.seed();
      const res = await this.api.edit(this.session, kind, target, seed);
      this.map = res.map;
      this.history.record({ kind, target, seed });
      this.renderMap();
    });
  }

  onUndo(): Promise<void> {
    return this.run(async () => {
      if (!this.history) throw new Error('nothing to undo');
      const res = await undo(this.api, this.history);
      this.session = res.session;
      this.map = res.map;
      this.history = res.history;
      this.renderMap();
    });
  }

  renderMap(): void {
    if (!this.map) return;
    paintMap(this.canvas, this.map, this.catalog.palette, this.zoom);
    const legend = this.root.querySelector('#legend')!;
    legend.innerHTML = '';
    for (const name of this.map.label_set) {
      const item = el('span', 'legend-item');
      const swatch = el('span', 'swatch');
      const idx = this.catalog.names.indexOf(name);
      swatch.style.background = cssColor(this.catalog.palette[idx] ?? [0, 0, 0]);
      item.append(swatch, el('span', '', name));
      legend.appendChild(item);
    }
    this.historyList.innerHTML = '';
    for (const line of this.history?.describe() ?? []) {
      this.historyList.appendChild(el('li', '', line));
    }
  }

  refreshControls(): void {
    const present = new Set(this.map?.label_set ?? []);
    const target = this.targetSelect?.value;
    const have = this.session !== null;
    set(this.buttons.sample, !this.busy);
    set(this.buttons.remove, !this.busy && have && present.has(target ?? ''));
    set(this.buttons.restyle, !this.busy && have && present.has(target ?? ''));
    set(this.buttons.add, !this.busy && have && !present.has(target ?? ''));
    set(this.buttons.undo, !this.busy && (this.history?.length ?? 0) > 0);
  }

  // test hooks
  currentMap(): MapPayload | null {
    return this.map;
  }

  currentSession(): string | null {
    return this.session;
  }
}

function el(tag: string, cls = '', text = ''): HTMLElement {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text) node.textContent = text;
  return node;
}

function button(label: string, onClick: () => void): HTMLButtonElement {
  const b = document.createElement('button');
  b.textContent = label;
  b.addEventListener('click', onClick);
  return b;
}

function set(b: HTMLButtonElement | undefined, enabled: boolean): void {
  if (b) b.disabled = !enabled;
}

export async function initApp(root: HTMLElement, api: ApiClient): Promise<App> {
  const app = new App(root, api);
  await app.start();
  return app;
}
