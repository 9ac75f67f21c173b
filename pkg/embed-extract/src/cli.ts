#!/usr/bin/env node
// extract --images DIR --model ID --out FILE --batch N

import { parseArgs } from "node:util";

import { DEFAULT_MODEL, OFFLINE_MODEL } from "./encoder.js";
import { runExtract } from "./extract.js";

const USAGE = `usage: embed-extract extract --images DIR [--model ID] --out FILE [--batch N]

Encodes every image in DIR and writes one {"id", "vec"} JSON line per
image.  Models: "${DEFAULT_MODEL}" (default; needs the optional
@xenova/transformers runtime and its weights) or "${OFFLINE_MODEL}" (built
in, deterministic, 512 dimensions, no downloads).`;

export async function main(argv: string[]): Promise<number> {
  if (argv[0] !== "extract") {
    console.error(USAGE);
    return 2;
  }
  let parsed;
  try {
    parsed = parseArgs({
      args: argv.slice(1),
      options: {
        images: { type: "string" },
        model: { type: "string", default: DEFAULT_MODEL },
        out: { type: "string" },
        batch: { type: "string", default: "16" },
      },
      strict: true,
    });
  } catch (err) {
    console.error(`embed-extract: ${err instanceof Error ? err.message : err}`);
    console.error(USAGE);
    return 2;
  }
  const { images, model, out, batch } = parsed.values;
  const batchSize = Number(batch);
  if (!images || !out || !Number.isInteger(batchSize) || batchSize < 1) {
    console.error(USAGE);
    return 2;
  }
  try {
    const report = await runExtract({
      imageDir: images,
      modelId: model!,
      outPath: out,
      batchSize,
    });
    console.log(
      `wrote ${report.written} embeddings (dim ${report.dim}) -> ${out}` +
        (report.skipped ? ` (${report.skipped} skipped)` : ""),
    );
    return 0;
  } catch (err) {
    console.error(`embed-extract: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] && import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
