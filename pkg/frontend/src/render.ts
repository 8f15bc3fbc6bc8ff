import type { MapPayload } from './types.ts';

export const BACKGROUND_RGB: [number, number, number] = [24, 24, 28];

/** Expand an index map into RGBA pixels at an integer zoom factor.
 *
 * No smoothing or interpolation: every map cell becomes a zoom x zoom block,
 * so class boundaries stay crisp at small resolutions. Index 0 renders as the
 * background color, index k+1 with palette entry k.
 */
export function indexMapToRgba(
  indexMap: number[],
  width: number,
  height: number,
  palette: [number, number, number][],
  zoom: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (!Number.isInteger(zoom) || zoom < 1) {
    throw new Error(`zoom must be a positive integer, got ${zoom}`);
  }
  if (indexMap.length !== width * height) {
    throw new Error(`index map has ${indexMap.length} entries for ${width}x${height}`);
  }
  const out = new Uint8ClampedArray(new ArrayBuffer(width * zoom * height * zoom * 4));
  const rowStride = width * zoom * 4;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const value = indexMap[y * width + x] ?? 0;
      const rgb = value === 0 ? BACKGROUND_RGB : (palette[value - 1] ?? BACKGROUND_RGB);
      for (let dy = 0; dy < zoom; dy++) {
        let offset = (y * zoom + dy) * rowStride + x * zoom * 4;
        for (let dx = 0; dx < zoom; dx++) {
          out[offset] = rgb[0];
          out[offset + 1] = rgb[1];
          out[offset + 2] = rgb[2];
          out[offset + 3] = 255;
          offset += 4;
        }
      }
    }
  }
  return out;
}

/** Paint a map payload onto a canvas element at the given zoom. */
export function paintMap(
  canvas: HTMLCanvasElement,
  map: MapPayload,
  palette: [number, number, number][],
  zoom: number,
): void {
  canvas.width = map.width * zoom;
  canvas.height = map.height * zoom;
  const ctx = canvas.getContext('2d');
  if (!ctx) throw new Error('2d canvas context unavailable');
  const rgba = indexMapToRgba(map.index_map, map.width, map.height, palette, zoom);
  ctx.putImageData(new ImageData(rgba, canvas.width, canvas.height), 0, 0);
}

export function cssColor(rgb: [number, number, number]): string {
  return `rgb(${rgb[0]}, ${rgb[1]}, ${rgb[2]})`;
}
