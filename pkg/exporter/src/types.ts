/** Shared types for the bundle exporter. */

/** RGB image, channels interleaved, values in [0, 1]. */
export interface RgbImage {
  width: number;
  height: number;
  /** length = width * height * 3, row-major, r g b */
  data: Float64Array;
}

/**
 * A contrastive encoder backend. Implementations: an HTTP client for a
 * real model served elsewhere, or a deterministic synthetic encoder for
 * tests and demos. Features are returned unnormalized; the exporter
 * L2-normalizes before writing.
 */
export interface Encoder {
  /** feature dimensionality D */
  readonly featureDim: number;
  /** prompt context embedding length P */
  readonly promptDim: number;
  /** expected square input size in pixels */
  readonly inputSize: number;
  /** learned logit scale of the checkpoint */
  readonly temperature: number;
  /** initial context embedding for a prompt template */
  contextEmbedding(template: string): Promise<Float64Array>;
  /** raw text feature for a context embedding and class name */
  textFeature(context: Float64Array, className: string): Promise<Float64Array>;
  /** raw image feature for a (cropped, resized) image */
  imageFeature(image: RgbImage): Promise<Float64Array>;
}

export interface ExportConfig {
  /** checkpoint identifier, recorded in bundle metadata */
  modelName: string;
  /** dataset directory containing manifest.json and images */
  datasetDir: string;
  /** optional split filter against the manifest's per-sample split field */
  split?: string;
  /** must contain the [class] placeholder */
  promptTemplate: string;
  /** views per sample, view 0 is the unaugmented image */
  viewsPerSample: number;
  /** central finite-difference step for the prompt jacobians */
  fdStep: number;
  /** cap on the number of samples (desk-scale bundles) */
  subsetSize?: number;
  /** augmentation seed */
  seed: number;
  /** JSON file holding a trained context embedding to expand around */
  contextEmbeddingFile?: string;
}

export const DEFAULT_CONFIG: Omit<ExportConfig, "modelName" | "datasetDir"> = {
  promptTemplate: "a photo of a [class]",
  viewsPerSample: 64,
  fdStep: 1e-3,
  seed: 0,
};

export interface DatasetManifest {
  classes: string[];
  samples: { path: string; label: number; split?: string }[];
}

export class ExporterError extends Error {}
export class ConfigError extends ExporterError {}
export class DataError extends ExporterError {}
