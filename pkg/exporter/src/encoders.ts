/** Encoder backends: a deterministic synthetic encoder and an HTTP client. */

import { SplitMix64, hashString } from "./rng.js";
import { DataError, Encoder, RgbImage } from "./types.js";

/**
 * Deterministic, smooth, *nonlinear* stand-in for a contrastive encoder.
 * It exists so the export pipeline (augmentation, finite-difference
 * jacobians, serialization) can be exercised end-to-end without model
 * weights; its text pathway is differentiable in the context embedding so
 * the first-order validity of the exported jacobians is testable.
 */
export class SyntheticEncoder implements Encoder {
  readonly featureDim: number;
  readonly promptDim: number;
  readonly inputSize: number;
  readonly temperature: number;
  private readonly seed: bigint;

  constructor(opts: { featureDim?: number; promptDim?: number;
                      inputSize?: number; temperature?: number;
                      seed?: number } = {}) {
    this.featureDim = opts.featureDim ?? 32;
    this.promptDim = opts.promptDim ?? 8;
    this.inputSize = opts.inputSize ?? 32;
    this.temperature = opts.temperature ?? 25.0;
    this.seed = BigInt(opts.seed ?? 12345);
  }

  private gaussish(rng: SplitMix64): number {
    // sum of uniforms, centered: cheap smooth pseudo-normal
    return rng.next() + rng.next() + rng.next() - 1.5;
  }

  async contextEmbedding(template: string): Promise<Float64Array> {
    const rng = new SplitMix64(this.seed ^ hashString(`ctx:${template}`));
    const out = new Float64Array(this.promptDim);
    for (let i = 0; i < out.length; i++) out[i] = this.gaussish(rng);
    return out;
  }

  async textFeature(context: Float64Array,
                    className: string): Promise<Float64Array> {
    if (context.length !== this.promptDim) {
      throw new DataError(
        `context embedding has length ${context.length}, expected ${this.promptDim}`);
    }
    const rng = new SplitMix64(this.seed ^ hashString(`text:${className}`));
    const out = new Float64Array(this.featureDim);
    for (let d = 0; d < this.featureDim; d++) {
      const bias = this.gaussish(rng);
      let acc = bias;
      for (let j = 0; j < this.promptDim; j++) {
        const w = this.gaussish(rng);
        const shift = this.gaussish(rng);
        acc += w * Math.tanh(context[j] + 0.3 * shift);
      }
      out[d] = Math.tanh(0.8 * acc) + 0.05 * bias;
    }
    return out;
  }

  async imageFeature(image: RgbImage): Promise<Float64Array> {
    // pooled 4x4 grid means per channel -> fixed random projection -> tanh
    const grid = 4;
    const pooled = new Float64Array(grid * grid * 3);
    const counts = new Float64Array(grid * grid);
    for (let y = 0; y < image.height; y++) {
      const gy = Math.min(grid - 1, Math.floor((y * grid) / image.height));
      for (let x = 0; x < image.width; x++) {
        const gx = Math.min(grid - 1, Math.floor((x * grid) / image.width));
        const cell = gy * grid + gx;
        counts[cell] += 1;
        for (let c = 0; c < 3; c++) {
          pooled[cell * 3 + c] += image.data[(y * image.width + x) * 3 + c];
        }
      }
    }
    for (let cell = 0; cell < grid * grid; cell++) {
      if (counts[cell] > 0) {
        for (let c = 0; c < 3; c++) pooled[cell * 3 + c] /= counts[cell];
      }
    }
    const rng = new SplitMix64(this.seed ^ hashString("image-projection"));
    const out = new Float64Array(this.featureDim);
    for (let d = 0; d < this.featureDim; d++) {
      let acc = 0.2 * this.gaussish(rng);
      for (let j = 0; j < pooled.length; j++) {
        acc += this.gaussish(rng) * (pooled[j] - 0.5);
      }
      out[d] = Math.tanh(acc);
    }
    return out;
  }
}

interface RemoteInfo {
  feature_dim: number;
  prompt_dim: number;
  input_size: number;
  temperature: number;
}

/**
 * Client for an embedding service exposing the checkpoint. Endpoints
 * (JSON over POST, arrays as plain lists):
 *
 *   GET  /info               -> {feature_dim, prompt_dim, input_size, temperature}
 *   POST /context_embedding  {template}                    -> {embedding}
 *   POST /text_feature       {context_embedding, class_name} -> {feature}
 *   POST /image_feature      {width, height, pixels}       -> {feature}
 */
export class HttpEncoder implements Encoder {
  readonly featureDim: number;
  readonly promptDim: number;
  readonly inputSize: number;
  readonly temperature: number;

  private constructor(private readonly baseUrl: string, info: RemoteInfo) {
    this.featureDim = info.feature_dim;
    this.promptDim = info.prompt_dim;
    this.inputSize = info.input_size;
    this.temperature = info.temperature;
  }

  static async connect(baseUrl: string): Promise<HttpEncoder> {
    const res = await fetch(new URL("/info", baseUrl));
    if (!res.ok) throw new DataError(`encoder service /info failed: ${res.status}`);
    return new HttpEncoder(baseUrl, (await res.json()) as RemoteInfo);
  }

  private async post(path: string, body: unknown): Promise<Float64Array> {
    const res = await fetch(new URL(path, this.baseUrl), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new DataError(`encoder service ${path} failed: ${res.status}`);
    const payload = (await res.json()) as { feature?: number[]; embedding?: number[] };
    const values = payload.feature ?? payload.embedding;
    if (!Array.isArray(values)) throw new DataError(`encoder service ${path}: bad payload`);
    return Float64Array.from(values);
  }

  contextEmbedding(template: string): Promise<Float64Array> {
    return this.post("/context_embedding", { template });
  }

  textFeature(context: Float64Array, className: string): Promise<Float64Array> {
    return this.post("/text_feature", {
      context_embedding: Array.from(context),
      class_name: className,
    });
  }

  imageFeature(image: RgbImage): Promise<Float64Array> {
    return this.post("/image_feature", {
      width: image.width,
      height: image.height,
      pixels: Array.from(image.data),
    });
  }
}
