import type { ApiClient } from './api.ts';
import type { EditKind, MapPayload, SessionResponse } from './types.ts';

export interface EditStep {
  kind: EditKind;
  target: string;
  seed: number;
}

/** History of one editing session: the sampling request that started it plus
 * every edit applied since.
 *
 * The service is the only thing that touches pixels, so undo is replay: a
 * fresh session is created from the recorded base (labels, seed) and every
 * step except the last is re-applied with its recorded seed. Determinism of
 * the backend makes the replay reproduce the earlier state exactly.
 */
export class SessionHistory {
  readonly steps: EditStep[] = [];

  constructor(
    readonly baseLabels: string[],
    readonly baseSeed: number,
  ) {}

  record(step: EditStep): void {
    this.steps.push(step);
  }

  get length(): number {
    return this.steps.length;
  }

  describe(): string[] {
    const lines = [`sample [${this.baseLabels.join(', ')}] seed ${this.baseSeed}`];
    for (const s of this.steps) {
      lines.push(`${s.kind} ${s.target} seed ${s.seed}`);
    }
    return lines;
  }
}

export interface ReplayResult {
  session: string;
  map: MapPayload;
  history: SessionHistory;
}

/** Replay the first `count` steps of a history through the service. */
export async function replayPrefix(
  api: ApiClient,
  history: SessionHistory,
  count: number,
): Promise<ReplayResult> {
  if (count < 0 || count > history.steps.length) {
    throw new Error(`cannot replay ${count} of ${history.steps.length} steps`);
  }
  let state: SessionResponse = await api.createSession(history.baseLabels, history.baseSeed);
  const replayed = new SessionHistory(history.baseLabels, history.baseSeed);
  for (const step of history.steps.slice(0, count)) {
    state = await api.edit(state.session, step.kind, step.target, step.seed);
    replayed.record(step);
  }
  return { session: state.session, map: state.map, history: replayed };
}

/** Undo the last edit by replaying everything before it. */
export function undo(api: ApiClient, history: SessionHistory): Promise<ReplayResult> {
  if (history.steps.length === 0) {
    throw new Error('nothing to undo');
  }
  return replayPrefix(api, history, history.steps.length - 1);
}
