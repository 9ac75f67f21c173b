// The extraction job: scan an image directory, encode every decodable
// image, and emit one {"id", "vec"} JSON line per image.

import { readdirSync, writeFileSync } from "node:fs";
import { basename, extname, join } from "node:path";

import { Encoder, createEncoder, isFileDriven } from "./encoder.js";
import { SUPPORTED_EXTENSIONS, decodeImage } from "./image.js";

export interface ExtractJob {
  imageDir: string;
  modelId: string;
  outPath: string;
  batchSize: number;
}

export interface ExtractReport {
  written: number;
  skipped: number;
  dim: number;
}

export async function runExtract(
  job: ExtractJob,
  log: (message: string) => void = console.error,
): Promise<ExtractReport> {
  if (job.batchSize < 1) {
    throw new Error(`batch size must be >= 1, got ${job.batchSize}`);
  }
  const files = readdirSync(job.imageDir)
    .filter((name) => SUPPORTED_EXTENSIONS.has(extname(name).toLowerCase()))
    .sort();
  if (files.length === 0) {
    throw new Error(`no images found under ${job.imageDir}`);
  }

  // fatal by design when the model cannot load; skipping images is
  // recoverable, a missing encoder is not
  const encoder: Encoder = await createEncoder(job.modelId);

  const lines: string[] = [];
  let skipped = 0;
  for (let start = 0; start < files.length; start += job.batchSize) {
    const batch = files.slice(start, start + job.batchSize);
    for (const name of batch) {
      const path = join(job.imageDir, name);
      const id = basename(name, extname(name));
      try {
        const vec = isFileDriven(encoder)
          ? await encoder.encodeFile(path)
          : await encoder.encode(decodeImage(path));
        if (vec.length !== encoder.dim) {
          throw new Error(`encoder produced ${vec.length} dims, declared ${encoder.dim}`);
        }
        lines.push(JSON.stringify({ id, vec }));
      } catch (err) {
        skipped += 1;
        log(`skipping ${name}: ${err instanceof Error ? err.message : err}`);
      }
    }
  }
  writeFileSync(job.outPath, lines.length ? lines.join("\n") + "\n" : "");
  return { written: lines.length, skipped, dim: encoder.dim };
}
