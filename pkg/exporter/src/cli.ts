#!/usr/bin/env node
/**
 * tptb-export: produce TPTB feature bundles from an encoder backend.
 *
 *   tptb-export --dataset DIR --out FILE [--encoder synthetic|URL]
 *               [--model NAME] [--template "a photo of a [class]"]
 *               [--views 64] [--fd-step 1e-3] [--subset K] [--seed 0]
 *               [--split NAME] [--context-file emb.json]
 */

import process from "node:process";

import { HttpEncoder, SyntheticEncoder } from "./encoders.js";
import { exportBundle } from "./export.js";
import { ConfigError, DEFAULT_CONFIG, Encoder, ExportConfig, ExporterError } from "./types.js";

interface Flags {
  [key: string]: string;
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new ConfigError(`unexpected argument ${arg}`);
    const key = arg.slice(2);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new ConfigError(`flag --${key} needs a value`);
    }
    flags[key] = value;
    i++;
  }
  return flags;
}

export async function main(argv: string[]): Promise<number> {
  let flags: Flags;
  try {
    flags = parseFlags(argv);
  } catch (err) {
    console.error(`usage error: ${(err as Error).message}`);
    return 2;
  }
  if (!flags["dataset"] || !flags["out"]) {
    console.error("usage error: --dataset and --out are required");
    return 2;
  }
  const config: ExportConfig = {
    modelName: flags["model"] ?? "synthetic",
    datasetDir: flags["dataset"],
    split: flags["split"],
    promptTemplate: flags["template"] ?? DEFAULT_CONFIG.promptTemplate,
    viewsPerSample: flags["views"] ? Number(flags["views"]) : DEFAULT_CONFIG.viewsPerSample,
    fdStep: flags["fd-step"] ? Number(flags["fd-step"]) : DEFAULT_CONFIG.fdStep,
    subsetSize: flags["subset"] ? Number(flags["subset"]) : undefined,
    seed: flags["seed"] ? Number(flags["seed"]) : DEFAULT_CONFIG.seed,
    contextEmbeddingFile: flags["context-file"],
  };
  try {
    let encoder: Encoder;
    const backend = flags["encoder"] ?? "synthetic";
    if (backend === "synthetic") {
      encoder = new SyntheticEncoder();
    } else {
      encoder = await HttpEncoder.connect(backend);
    }
    const bundle = await exportBundle(config, encoder, flags["out"]);
    const { d, c, p, s, n } = bundle.dims;
    console.log(`wrote ${flags["out"]}: D=${d} C=${c} P=${p} S=${s} N=${n} ` +
                `tau=${bundle.temperature}`);
    return 0;
  } catch (err) {
    if (err instanceof ConfigError) {
      console.error(`config error: ${err.message}`);
      return 2;
    }
    if (err instanceof ExporterError) {
      console.error(`export error: ${err.message}`);
      return 3;
    }
    throw err;
  }
}

const invokedDirectly = process.argv[1] !== undefined
  && import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
