// Encoder registry: the reference CLIP vision encoder when its runtime is
// available, and a self-contained deterministic fallback for offline work.

import { Raster, areaResize, channels } from "./image.js";

export interface Encoder {
  /** Model identifier this encoder answers to. */
  readonly id: string;
  /** Output width, declared at load time; every vector must match it. */
  readonly dim: number;
  encode(raster: Raster): Promise<number[]>;
}

export const DEFAULT_MODEL = "clip-vit-base-patch32";
export const OFFLINE_MODEL = "grid-512";

/**
 * Deterministic 512-dimensional visual descriptor, no weights required:
 * a 16x16 area-averaged luminance grid (256), 8x8 grids of horizontal and
 * vertical luminance gradient magnitude (64 + 64), and 8x8 grids of the
 * two opponent-color channels (64 + 64).  Raw, unnormalized values;
 * consumers compute cosine similarity, so scale is irrelevant.
 */
class GridEncoder implements Encoder {
  readonly id = OFFLINE_MODEL;
  readonly dim = 512;

  async encode(raster: Raster): Promise<number[]> {
    const { luma, chromaRG, chromaBY } = channels(raster);
    const lumaGrid = areaResize(luma, raster.width, raster.height, 16);

    const dx = new Float64Array(16 * 16);
    const dy = new Float64Array(16 * 16);
    for (let y = 0; y < 16; y++) {
      for (let x = 0; x < 16; x++) {
        const here = lumaGrid[y * 16 + x];
        dx[y * 16 + x] = x + 1 < 16 ? Math.abs(lumaGrid[y * 16 + x + 1] - here) : 0;
        dy[y * 16 + x] = y + 1 < 16 ? Math.abs(lumaGrid[(y + 1) * 16 + x] - here) : 0;
      }
    }

    const vec: number[] = Array.from(lumaGrid);
    const push8 = (grid: Float64Array, w: number, h: number) => {
      for (const v of areaResize(grid, w, h, 8)) vec.push(v);
    };
    push8(dx, 16, 16);
    push8(dy, 16, 16);
    push8(chromaRG, raster.width, raster.height);
    push8(chromaBY, raster.width, raster.height);
    if (vec.length !== this.dim) {
      throw new Error(`internal: produced ${vec.length} dims, declared ${this.dim}`);
    }
    return vec;
  }
}

/**
 * The reference vision encoder (ViT-B/32 variant) through transformers.js.
 * The runtime and its weights are not bundled; a missing runtime or a
 * failed weight fetch is fatal, as there is nothing sensible to fall back
 * to without changing the embedding space.
 */
class ClipEncoder implements Encoder {
  readonly id: string;
  readonly dim: number;
  private readonly extractor: (url: string) => Promise<{ data: Float32Array }>;

  private constructor(id: string, dim: number, extractor: ClipEncoder["extractor"]) {
    this.id = id;
    this.dim = dim;
    this.extractor = extractor;
  }

  static async load(modelId: string): Promise<ClipEncoder> {
    let transformers: any;
    // optional runtime, resolved only when this model is requested
    const runtimeSpecifier = "@xenova/transformers";
    try {
      transformers = await import(/* @vite-ignore */ runtimeSpecifier);
    } catch (err) {
      throw new Error(
        `model "${modelId}" needs the optional @xenova/transformers runtime ` +
          `(npm install @xenova/transformers); import failed: ${err}`,
      );
    }
    const hubId = modelId.includes("/") ? modelId : `Xenova/${modelId}`;
    const pipe = await transformers.pipeline("image-feature-extraction", hubId);
    const dim = pipe.model?.config?.projection_dim ?? 512;
    return new ClipEncoder(modelId, dim, async (url: string) => pipe(url));
  }

  async encode(_raster: Raster): Promise<number[]> {
    throw new Error("ClipEncoder.encode is driven through encodeFile");
  }

  async encodeFile(path: string): Promise<number[]> {
    const out = await this.extractor(path);
    return Array.from(out.data);
  }
}

export async function createEncoder(modelId: string): Promise<Encoder> {
  if (modelId === OFFLINE_MODEL) {
    return new GridEncoder();
  }
  return ClipEncoder.load(modelId);
}

export function isFileDriven(encoder: Encoder): encoder is Encoder & {
  encodeFile(path: string): Promise<number[]>;
} {
  return typeof (encoder as any).encodeFile === "function";
}
