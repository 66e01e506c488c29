/**
 * TPTB bundle writer/reader, byte-compatible with the analysis package
 * (see ../FORMAT.md): little-endian, float32 payload, header
 * "TPTB" | u32 version=1 | u32 D C P S N | f32 temperature | u32 name_len.
 */

import { DataError } from "./types.js";

export const MAGIC = "TPTB";
export const VERSION = 1;
const HEADER_SIZE = 4 + 4 * 6 + 4 + 4;

export interface Bundle {
  classNames: string[];
  metadata: string[];
  temperature: number;
  /** C x D, rows unit norm */
  baseTextFeatures: Float32Array;
  /** C x D x P, index order [c][d][p] */
  jacobians: Float32Array;
  labels: Uint32Array;
  /** S x N x D, rows unit norm */
  imageFeatures: Float32Array;
  dims: { d: number; c: number; p: number; s: number; n: number };
}

export function encodeBundle(bundle: Bundle): Buffer {
  const { d, c, p, s, n } = bundle.dims;
  for (const entry of [...bundle.classNames, ...bundle.metadata]) {
    if (entry.includes("\n")) throw new DataError("name table entries must not contain newlines");
  }
  if (bundle.classNames.length !== c) throw new DataError("class name count mismatch");
  const nameTable = Buffer.from(
    [...bundle.classNames, ...bundle.metadata].join("\n"), "utf-8");

  const header = Buffer.alloc(HEADER_SIZE);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(d, 8);
  header.writeUInt32LE(c, 12);
  header.writeUInt32LE(p, 16);
  header.writeUInt32LE(s, 20);
  header.writeUInt32LE(n, 24);
  header.writeFloatLE(bundle.temperature, 28);
  header.writeUInt32LE(nameTable.length, 32);

  const base = f32Bytes(bundle.baseTextFeatures, c * d, "base text features");
  const jac = f32Bytes(bundle.jacobians, c * d * p, "jacobians");
  const samples: Buffer[] = [];
  for (let i = 0; i < s; i++) {
    const label = Buffer.alloc(4);
    label.writeUInt32LE(bundle.labels[i], 0);
    samples.push(label);
    samples.push(f32Bytes(bundle.imageFeatures.subarray(i * n * d, (i + 1) * n * d),
                          n * d, `image features of sample ${i}`));
  }
  return Buffer.concat([header, nameTable, base, jac, ...samples]);
}

function f32Bytes(arr: Float32Array, expected: number, what: string): Buffer {
  if (arr.length !== expected) {
    throw new DataError(`${what}: have ${arr.length} values, expected ${expected}`);
  }
  const buf = Buffer.alloc(4 * arr.length);
  for (let i = 0; i < arr.length; i++) buf.writeFloatLE(arr[i], 4 * i);
  return buf;
}

export function decodeBundle(buf: Buffer): Bundle {
  if (buf.length < HEADER_SIZE) throw new DataError("truncated header");
  if (buf.toString("ascii", 0, 4) !== MAGIC) throw new DataError("bad magic");
  const version = buf.readUInt32LE(4);
  if (version !== VERSION) throw new DataError(`unsupported version ${version}`);
  const d = buf.readUInt32LE(8);
  const c = buf.readUInt32LE(12);
  const p = buf.readUInt32LE(16);
  const s = buf.readUInt32LE(20);
  const n = buf.readUInt32LE(24);
  const temperature = buf.readFloatLE(28);
  const nameLen = buf.readUInt32LE(32);

  let pos = HEADER_SIZE;
  const take = (count: number, what: string): Buffer => {
    if (pos + count > buf.length) {
      throw new DataError(`truncated while reading ${what} at offset ${pos}`);
    }
    const out = buf.subarray(pos, pos + count);
    pos += count;
    return out;
  };
  const lines = take(nameLen, "name table").toString("utf-8").split("\n");
  if (lines.length < c) throw new DataError("name table too short");
  const readF32 = (count: number, what: string): Float32Array => {
    const bytes = take(4 * count, what);
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) out[i] = bytes.readFloatLE(4 * i);
    return out;
  };
  const base = readF32(c * d, "base text features");
  const jac = readF32(c * d * p, "jacobians");
  const labels = new Uint32Array(s);
  const images = new Float32Array(s * n * d);
  for (let i = 0; i < s; i++) {
    labels[i] = take(4, `label of sample ${i}`).readUInt32LE(0);
    images.set(readF32(n * d, `image features of sample ${i}`), i * n * d);
  }
  if (pos !== buf.length) throw new DataError("trailing bytes");
  return {
    classNames: lines.slice(0, c),
    metadata: lines.slice(c),
    temperature,
    baseTextFeatures: base,
    jacobians: jac,
    labels,
    imageFeatures: images,
    dims: { d, c, p, s, n },
  };
}
