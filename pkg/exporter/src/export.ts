/**
 * The export pipeline: encode a dataset's augmentation batches, compute
 * base text features for the initial prompt, and central finite-difference
 * jacobians of the text features with respect to the context embedding.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { augmentationMetadata, makeViews } from "./augment.js";
import { Bundle, encodeBundle } from "./format.js";
import { decodePpm } from "./ppm.js";
import { SplitMix64 } from "./rng.js";
import {
  ConfigError, DataError, DatasetManifest, Encoder, ExportConfig,
} from "./types.js";

function l2norm(vec: Float64Array): number {
  let acc = 0;
  for (const v of vec) acc += v * v;
  return Math.sqrt(acc);
}

function normalized(vec: Float64Array, what: string): Float64Array {
  for (const v of vec) {
    if (!Number.isFinite(v)) throw new DataError(`non-finite encoder output for ${what}`);
  }
  const norm = l2norm(vec);
  if (norm === 0) throw new DataError(`zero-norm encoder output for ${what}`);
  return vec.map((v) => v / norm);
}

export function validateConfig(config: ExportConfig): void {
  if (!config.promptTemplate.includes("[class]")) {
    throw new ConfigError("prompt template must contain the [class] placeholder");
  }
  if (config.viewsPerSample < 1) throw new ConfigError("viewsPerSample must be >= 1");
  if (!(config.fdStep > 0)) throw new ConfigError("fdStep must be positive");
  if (config.subsetSize !== undefined && config.subsetSize < 1) {
    throw new ConfigError("subsetSize must be >= 1");
  }
}

export function loadManifest(config: ExportConfig): DatasetManifest {
  const manifestPath = path.join(config.datasetDir, "manifest.json");
  if (!fs.existsSync(manifestPath)) {
    throw new DataError(`dataset manifest not found: ${manifestPath}`);
  }
  const manifest = JSON.parse(fs.readFileSync(manifestPath, "utf-8")) as DatasetManifest;
  if (!Array.isArray(manifest.classes) || manifest.classes.length === 0) {
    throw new DataError("manifest has no classes");
  }
  let samples = manifest.samples;
  if (config.split !== undefined) {
    samples = samples.filter((s) => s.split === config.split);
  }
  if (config.subsetSize !== undefined) {
    samples = samples.slice(0, config.subsetSize);
  }
  if (samples.length === 0) throw new DataError("no samples selected");
  for (const sample of samples) {
    if (!Number.isInteger(sample.label) || sample.label < 0
        || sample.label >= manifest.classes.length) {
      throw new DataError(`sample ${sample.path} has invalid label ${sample.label}`);
    }
  }
  return { classes: manifest.classes, samples };
}

async function resolveContext(config: ExportConfig,
                              encoder: Encoder): Promise<Float64Array> {
  if (config.contextEmbeddingFile) {
    const raw = JSON.parse(fs.readFileSync(config.contextEmbeddingFile, "utf-8"));
    if (!Array.isArray(raw) || raw.length !== encoder.promptDim) {
      throw new ConfigError(
        `context embedding file must hold ${encoder.promptDim} numbers`);
    }
    return Float64Array.from(raw as number[]);
  }
  return encoder.contextEmbedding(config.promptTemplate);
}

/** base text features (unit norm) + jacobians wrt the context embedding */
export async function textSide(encoder: Encoder, context: Float64Array,
                               classNames: string[], fdStep: number): Promise<{
  base: Float32Array; jacobians: Float32Array;
}> {
  const d = encoder.featureDim;
  const p = encoder.promptDim;
  const base = new Float32Array(classNames.length * d);
  const jacobians = new Float32Array(classNames.length * d * p);
  for (let c = 0; c < classNames.length; c++) {
    const raw = await encoder.textFeature(context, classNames[c]);
    if (raw.length !== d) throw new DataError("encoder returned wrong feature size");
    const rawNorm = l2norm(raw);
    const unit = normalized(raw, `class ${classNames[c]}`);
    base.set(Float32Array.from(unit), c * d);
    for (let k = 0; k < p; k++) {
      const hi = Float64Array.from(context);
      const lo = Float64Array.from(context);
      hi[k] += fdStep;
      lo[k] -= fdStep;
      const fHi = await encoder.textFeature(hi, classNames[c]);
      const fLo = await encoder.textFeature(lo, classNames[c]);
      for (let j = 0; j < d; j++) {
        // scaled by the raw norm so normalize(base + J p) linearizes the
        // true encoder around the expansion point (see FORMAT.md)
        jacobians[(c * d + j) * p + k] =
          (fHi[j] - fLo[j]) / (2 * fdStep) / rawNorm;
      }
    }
  }
  return { base, jacobians };
}

export async function buildBundle(config: ExportConfig,
                                  encoder: Encoder): Promise<Bundle> {
  validateConfig(config);
  const manifest = loadManifest(config);
  const context = await resolveContext(config, encoder);
  const { base, jacobians } = await textSide(
    encoder, context, manifest.classes, config.fdStep);

  const d = encoder.featureDim;
  const n = config.viewsPerSample;
  const s = manifest.samples.length;
  const labels = new Uint32Array(s);
  const imageFeatures = new Float32Array(s * n * d);
  for (let i = 0; i < s; i++) {
    const sample = manifest.samples[i];
    labels[i] = sample.label;
    const imagePath = path.join(config.datasetDir, sample.path);
    const image = decodePpm(fs.readFileSync(imagePath));
    // per-sample stream: view features don't depend on processing order
    const rng = new SplitMix64(BigInt(config.seed) * 1000003n + BigInt(i));
    const views = makeViews(image, n, encoder.inputSize, rng);
    for (let v = 0; v < n; v++) {
      let feature: Float64Array;
      try {
        feature = normalized(await encoder.imageFeature(views[v]),
                             `sample ${i} view ${v}`);
      } catch (err) {
        throw new DataError(`aborting at sample ${i}: ${(err as Error).message}`);
      }
      if (feature.length !== d) throw new DataError("encoder returned wrong feature size");
      imageFeatures.set(Float32Array.from(feature), (i * n + v) * d);
    }
  }

  const metadata = [
    `model=${config.modelName}`,
    `template=${config.promptTemplate.replace(/\n/g, " ")}`,
    augmentationMetadata(),
    `fd_step=${config.fdStep}`,
    `seed=${config.seed}`,
    `context_source=${config.contextEmbeddingFile ? "file" : "template"}`,
  ];
  return {
    classNames: manifest.classes,
    metadata,
    temperature: encoder.temperature,
    baseTextFeatures: base,
    jacobians,
    labels,
    imageFeatures,
    dims: { d, c: manifest.classes.length, p: encoder.promptDim, s, n },
  };
}

/** run the pipeline and write the bundle file */
export async function exportBundle(config: ExportConfig, encoder: Encoder,
                                   outPath: string): Promise<Bundle> {
  const bundle = await buildBundle(config, encoder);
  fs.writeFileSync(outPath, encodeBundle(bundle));
  return bundle;
}

/**
 * Prompt-initialization variant: same dataset and seed, different prompt
 * (template or a trained context embedding file). Image features are
 * bit-identical to the base export; only the text side changes.
 */
export async function exportPromptVariant(config: ExportConfig, encoder: Encoder,
                                          outPath: string, template?: string,
                                          contextFile?: string): Promise<Bundle> {
  const variant: ExportConfig = {
    ...config,
    promptTemplate: template ?? config.promptTemplate,
    contextEmbeddingFile: contextFile,
  };
  return exportBundle(variant, encoder, outPath);
}
