/**
 * Augmentation batch: view 0 is the plain resized image, the rest are
 * random-resized-crops with horizontal flips, as in the test-time tuning
 * protocol this exporter feeds.
 */

import { SplitMix64 } from "./rng.js";
import { RgbImage } from "./types.js";

export const CROP_SCALE: [number, number] = [0.5, 1.0];
export const CROP_RATIO: [number, number] = [3 / 4, 4 / 3];
export const FLIP_PROB = 0.5;

export function augmentationMetadata(): string {
  return `augment=rrc(scale=${CROP_SCALE[0]}-${CROP_SCALE[1]},` +
    `ratio=${CROP_RATIO[0].toFixed(4)}-${CROP_RATIO[1].toFixed(4)})` +
    `+hflip(p=${FLIP_PROB}),interp=bilinear`;
}

function pixel(img: RgbImage, x: number, y: number, c: number): number {
  const xi = Math.max(0, Math.min(img.width - 1, x));
  const yi = Math.max(0, Math.min(img.height - 1, y));
  return img.data[(yi * img.width + xi) * 3 + c];
}

/** bilinear resample of a source window to size x size */
export function resizeRegion(img: RgbImage, left: number, top: number,
                             width: number, height: number,
                             size: number): RgbImage {
  const out = new Float64Array(size * size * 3);
  for (let y = 0; y < size; y++) {
    // align-corners=false convention
    const sy = top + ((y + 0.5) * height) / size - 0.5;
    const y0 = Math.floor(sy);
    const fy = sy - y0;
    for (let x = 0; x < size; x++) {
      const sx = left + ((x + 0.5) * width) / size - 0.5;
      const x0 = Math.floor(sx);
      const fx = sx - x0;
      for (let c = 0; c < 3; c++) {
        const v00 = pixel(img, x0, y0, c);
        const v01 = pixel(img, x0 + 1, y0, c);
        const v10 = pixel(img, x0, y0 + 1, c);
        const v11 = pixel(img, x0 + 1, y0 + 1, c);
        out[(y * size + x) * 3 + c] =
          (1 - fy) * ((1 - fx) * v00 + fx * v01) +
          fy * ((1 - fx) * v10 + fx * v11);
      }
    }
  }
  return { width: size, height: size, data: out };
}

export function resize(img: RgbImage, size: number): RgbImage {
  return resizeRegion(img, 0, 0, img.width, img.height, size);
}

export function hflip(img: RgbImage): RgbImage {
  const out = new Float64Array(img.data.length);
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      const src = (y * img.width + x) * 3;
      const dst = (y * img.width + (img.width - 1 - x)) * 3;
      out[dst] = img.data[src];
      out[dst + 1] = img.data[src + 1];
      out[dst + 2] = img.data[src + 2];
    }
  }
  return { width: img.width, height: img.height, data: out };
}

/** torchvision-style random resized crop (10 tries, then center fallback) */
export function randomResizedCrop(img: RgbImage, rng: SplitMix64,
                                  size: number): RgbImage {
  const area = img.width * img.height;
  for (let attempt = 0; attempt < 10; attempt++) {
    const targetArea = area * rng.uniform(CROP_SCALE[0], CROP_SCALE[1]);
    const logRatio = rng.uniform(Math.log(CROP_RATIO[0]), Math.log(CROP_RATIO[1]));
    const aspect = Math.exp(logRatio);
    const w = Math.round(Math.sqrt(targetArea * aspect));
    const h = Math.round(Math.sqrt(targetArea / aspect));
    if (w > 0 && h > 0 && w <= img.width && h <= img.height) {
      const left = rng.int(img.width - w + 1);
      const top = rng.int(img.height - h + 1);
      return resizeRegion(img, left, top, w, h, size);
    }
  }
  const side = Math.min(img.width, img.height);
  const left = Math.floor((img.width - side) / 2);
  const top = Math.floor((img.height - side) / 2);
  return resizeRegion(img, left, top, side, side, size);
}

/** view 0: plain resize; views 1..n-1: random resized crop + maybe flip */
export function makeViews(img: RgbImage, n: number, size: number,
                          rng: SplitMix64): RgbImage[] {
  const views: RgbImage[] = [resize(img, size)];
  for (let v = 1; v < n; v++) {
    let view = randomResizedCrop(img, rng, size);
    if (rng.next() < FLIP_PROB) view = hflip(view);
    views.push(view);
  }
  return views;
}
