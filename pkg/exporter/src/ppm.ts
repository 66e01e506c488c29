/** Binary PPM (P6, maxval 255) decode/encode. */

import { DataError, RgbImage } from "./types.js";

export function decodePpm(buf: Buffer): RgbImage {
  if (buf.length < 2 || buf.toString("ascii", 0, 2) !== "P6") {
    throw new DataError("not a P6 PPM file");
  }
  // header: "P6" <ws> width <ws> height <ws> maxval <single ws> payload
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < buf.length && isSpace(buf[pos])) pos++;
    if (pos < buf.length && buf[pos] === 0x23) { // '#' comment
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < buf.length && !isSpace(buf[pos])) pos++;
    const token = buf.toString("ascii", start, pos);
    const value = Number(token);
    if (!Number.isInteger(value) || value <= 0) {
      throw new DataError(`bad PPM header token ${JSON.stringify(token)}`);
    }
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new DataError(`unsupported PPM maxval ${maxval}`);
  const need = width * height * 3;
  if (buf.length - pos < need) {
    throw new DataError(`PPM payload truncated: need ${need} bytes`);
  }
  const data = new Float64Array(need);
  for (let i = 0; i < need; i++) data[i] = buf[pos + i] / 255;
  return { width, height, data };
}

export function encodePpm(image: RgbImage): Buffer {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  const body = Buffer.alloc(image.width * image.height * 3);
  for (let i = 0; i < body.length; i++) {
    body[i] = Math.max(0, Math.min(255, Math.round(image.data[i] * 255)));
  }
  return Buffer.concat([header, body]);
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}
