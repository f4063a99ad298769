/** Client-side region hit-testing via the label-map image.
 *
 * The server sends one grayscale PNG per view whose pixel value is the
 * mask id; decoding it once makes every click a local array lookup
 * instead of a server round-trip.
 */

export interface LabelMap {
  width: number;
  height: number;
  /** Row-major mask id per pixel. */
  labels: Uint8Array;
}

export function labelMapFromGrid(grid: number[][]): LabelMap {
  const height = grid.length;
  const width = grid[0]?.length ?? 0;
  const labels = new Uint8Array(width * height);
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      labels[r * width + c] = grid[r][c];
    }
  }
  return { width, height, labels };
}

/** Build a label map from RGBA pixel data (the decoded label-map PNG). */
export function labelMapFromRgba(width: number, height: number, rgba: Uint8ClampedArray): LabelMap {
  const labels = new Uint8Array(width * height);
  for (let i = 0; i < width * height; i++) {
    labels[i] = rgba[i * 4]; // grayscale: the red channel carries the id
  }
  return { width, height, labels };
}

/** Mask id under an image-space pixel, or null when outside the image. */
export function labelAt(map: LabelMap, x: number, y: number): number | null {
  const col = Math.floor(x);
  const row = Math.floor(y);
  if (col < 0 || row < 0 || col >= map.width || row >= map.height) return null;
  return map.labels[row * map.width + col];
}

export function maskIds(map: LabelMap): number[] {
  const present = new Set<number>();
  for (const value of map.labels) present.add(value);
  return [...present].sort((a, b) => a - b);
}

/** Boundary pixels of one mask, for outlining the active region. */
export function maskOutline(map: LabelMap, maskId: number): Array<[number, number]> {
  const out: Array<[number, number]> = [];
  const { width, height, labels } = map;
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      if (labels[r * width + c] !== maskId) continue;
      const edge =
        r === 0 ||
        c === 0 ||
        r === height - 1 ||
        c === width - 1 ||
        labels[(r - 1) * width + c] !== maskId ||
        labels[(r + 1) * width + c] !== maskId ||
        labels[r * width + c - 1] !== maskId ||
        labels[r * width + c + 1] !== maskId;
      if (edge) out.push([c, r]);
    }
  }
  return out;
}
