// Pure-JS decoding of PNG and JPEG files into RGBA rasters.

import { readFileSync } from "node:fs";
import { extname } from "node:path";
import { PNG } from "pngjs";
import jpeg from "jpeg-js";

export interface Raster {
  width: number;
  height: number;
  data: Uint8Array; // RGBA, row-major
}

export const SUPPORTED_EXTENSIONS = new Set([".png", ".jpg", ".jpeg"]);

export function decodeImage(path: string): Raster {
  const ext = extname(path).toLowerCase();
  const bytes = readFileSync(path);
  if (ext === ".png") {
    const png = PNG.sync.read(bytes);
    return { width: png.width, height: png.height, data: new Uint8Array(png.data) };
  }
  if (ext === ".jpg" || ext === ".jpeg") {
    const img = jpeg.decode(bytes, { useTArray: true, maxMemoryUsageInMB: 512 });
    return { width: img.width, height: img.height, data: new Uint8Array(img.data) };
  }
  throw new Error(`unsupported image extension: ${ext}`);
}

/** Exact area-average downsample of one channel to size x size. */
export function areaResize(
  channel: Float64Array,
  width: number,
  height: number,
  size: number,
): Float64Array {
  const out = new Float64Array(size * size);
  for (let oy = 0; oy < size; oy++) {
    const y0 = (oy * height) / size;
    const y1 = ((oy + 1) * height) / size;
    for (let ox = 0; ox < size; ox++) {
      const x0 = (ox * width) / size;
      const x1 = ((ox + 1) * width) / size;
      let sum = 0;
      let weight = 0;
      for (let sy = Math.floor(y0); sy < Math.min(Math.ceil(y1), height); sy++) {
        const wy = Math.min(y1, sy + 1) - Math.max(y0, sy);
        if (wy <= 0) continue;
        for (let sx = Math.floor(x0); sx < Math.min(Math.ceil(x1), width); sx++) {
          const wx = Math.min(x1, sx + 1) - Math.max(x0, sx);
          if (wx <= 0) continue;
          sum += channel[sy * width + sx] * wx * wy;
          weight += wx * wy;
        }
      }
      out[oy * size + ox] = weight > 0 ? sum / weight : 0;
    }
  }
  return out;
}

export function channels(raster: Raster): {
  luma: Float64Array;
  chromaRG: Float64Array;
  chromaBY: Float64Array;
} {
  const n = raster.width * raster.height;
  const luma = new Float64Array(n);
  const chromaRG = new Float64Array(n);
  const chromaBY = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    const r = raster.data[4 * i];
    const g = raster.data[4 * i + 1];
    const b = raster.data[4 * i + 2];
    luma[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    chromaRG[i] = r - g;
    chromaBY[i] = b - (r + g) / 2;
  }
  return { luma, chromaRG, chromaBY };
}
