import { describe, expect, it } from "vitest";

import { Bundle, decodeBundle, encodeBundle } from "../src/format.js";
import { DataError } from "../src/types.js";

function sampleBundle(): Bundle {
  const d = 3, c = 2, p = 2, s = 2, n = 2;
  const unit = (vals: number[]): number[] => {
    const norm = Math.sqrt(vals.reduce((a, v) => a + v * v, 0));
    return vals.map((v) => v / norm);
  };
  const base = new Float32Array([...unit([1, 2, 2]), ...unit([2, -1, 0])]);
  const jacobians = Float32Array.from(
    { length: c * d * p }, (_, i) => Math.sin(i + 1));
  const imageFeatures = new Float32Array(s * n * d);
  for (let i = 0; i < s * n; i++) {
    imageFeatures.set(unit([i + 1, 1, -1]), i * d);
  }
  return {
    classNames: ["cat", "dog"],
    metadata: ["model=test"],
    temperature: 25.0,
    baseTextFeatures: base,
    jacobians,
    labels: new Uint32Array([0, 1]),
    imageFeatures,
    dims: { d, c, p, s, n },
  };
}

describe("TPTB encode/decode", () => {
  it("round-trips bit-exactly", () => {
    const bundle = sampleBundle();
    const bytes = encodeBundle(bundle);
    const back = decodeBundle(bytes);
    expect(back.classNames).toEqual(bundle.classNames);
    expect(back.metadata).toEqual(bundle.metadata);
    expect(back.temperature).toBe(bundle.temperature);
    expect(Array.from(back.baseTextFeatures)).toEqual(
      Array.from(bundle.baseTextFeatures));
    expect(Array.from(back.jacobians)).toEqual(Array.from(bundle.jacobians));
    expect(Array.from(back.labels)).toEqual(Array.from(bundle.labels));
    expect(Array.from(back.imageFeatures)).toEqual(
      Array.from(bundle.imageFeatures));
    expect(encodeBundle(back).equals(bytes)).toBe(true);
  });

  it("has the documented header layout", () => {
    const bytes = encodeBundle(sampleBundle());
    expect(bytes.toString("ascii", 0, 4)).toBe("TPTB");
    expect(bytes.readUInt32LE(4)).toBe(1);   // version
    expect(bytes.readUInt32LE(8)).toBe(3);   // D
    expect(bytes.readUInt32LE(12)).toBe(2);  // C
    expect(bytes.readUInt32LE(16)).toBe(2);  // P
    expect(bytes.readUInt32LE(20)).toBe(2);  // S
    expect(bytes.readUInt32LE(24)).toBe(2);  // N
    expect(bytes.readFloatLE(28)).toBeCloseTo(25.0, 6);
  });

  it("rejects bad magic, truncation and trailing bytes", () => {
    const bytes = encodeBundle(sampleBundle());
    const branded = Buffer.from(bytes);
    branded.write("NOPE", 0, "ascii");
    expect(() => decodeBundle(branded)).toThrow(DataError);
    expect(() => decodeBundle(bytes.subarray(0, bytes.length - 5)))
      .toThrow(/truncated/);
    expect(() => decodeBundle(Buffer.concat([bytes, Buffer.from([0])])))
      .toThrow(/trailing/);
  });

  it("rejects newline in class names", () => {
    const bundle = sampleBundle();
    bundle.classNames = ["bad\nname", "dog"];
    expect(() => encodeBundle(bundle)).toThrow(DataError);
  });
});
