export interface CatalogInfo {
  names: string[];
  palette: [number, number, number][];
  resolution: [number, number]; // [height, width]
  order: string[];
}

/** Map payload as served by the backend: RLE channel bitmaps plus a composed
 * index map (0 = background, k+1 = class k) for direct rendering. */
export interface MapPayload {
  width: number;
  height: number;
  label_set: string[];
  channels: Record<string, string>;
  index_map: number[];
  seed: number | null;
}

export interface SessionResponse {
  session: string;
  map: MapPayload;
}

export type EditKind = 'remove' | 'add' | 'new_style';

export interface ApiErrorBody {
  code: string;
  message: string;
}
