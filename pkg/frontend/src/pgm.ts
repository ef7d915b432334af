/** Binary PGM (P5) decoding for diff and attention heatmaps.
 *
 * The service emits maxval-255 maps; the decoder tolerates comments and
 * arbitrary header whitespace so it is not coupled to one writer.
 */

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major bytes, one per pixel. */
  pixels: Uint8Array;
}

export function base64ToBytes(b64: string): Uint8Array {
  const binary = atob(b64);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
  return bytes;
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d || byte === 0x0c || byte === 0x0b;
}

/** Reads the next whitespace-delimited header token, skipping # comments. */
function nextToken(bytes: Uint8Array, pos: number): { token: string; pos: number } {
  while (pos < bytes.length) {
    const b = bytes[pos]!;
    if (isSpace(b)) {
      pos++;
    } else if (b === 0x23) {
      while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
    } else {
      break;
    }
  }
  const start = pos;
  while (pos < bytes.length && !isSpace(bytes[pos]!) && bytes[pos] !== 0x23) pos++;
  if (start === pos) throw new Error("truncated PGM header");
  return { token: new TextDecoder().decode(bytes.subarray(start, pos)), pos };
}

function decodeNetpbm(bytes: Uint8Array, magic: string, channels: number): GrayImage {
  let t = nextToken(bytes, 0);
  if (t.token !== magic) throw new Error(`expected ${magic}, got ${t.token}`);
  t = nextToken(bytes, t.pos);
  const width = Number(t.token);
  t = nextToken(bytes, t.pos);
  const height = Number(t.token);
  t = nextToken(bytes, t.pos);
  const maxval = Number(t.token);
  if (!Number.isInteger(width) || !Number.isInteger(height) || width <= 0 || height <= 0) {
    throw new Error("bad dimensions");
  }
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  const raster = t.pos + 1; // single whitespace byte after maxval
  const count = width * height * channels;
  if (bytes.length < raster + count) throw new Error("truncated raster");
  return { width, height, pixels: bytes.subarray(raster, raster + count) };
}

export function decodePgm(bytes: Uint8Array): GrayImage {
  return decodeNetpbm(bytes, "P5", 1);
}

/** Binary PPM; pixels hold interleaved RGB triples. */
export function decodePpm(bytes: Uint8Array): GrayImage {
  return decodeNetpbm(bytes, "P6", 3);
}

/** Renders an RGB PPM payload as a PNG data URI. */
export function ppmToDataUri(b64: string, scale = 1): string {
  const img = decodePpm(base64ToBytes(b64));
  const canvas = document.createElement("canvas");
  canvas.width = img.width * scale;
  canvas.height = img.height * scale;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  const data = ctx.createImageData(canvas.width, canvas.height);
  for (let y = 0; y < canvas.height; y++) {
    const sy = Math.floor(y / scale);
    for (let x = 0; x < canvas.width; x++) {
      const s = (sy * img.width + Math.floor(x / scale)) * 3;
      const o = (y * canvas.width + x) * 4;
      data.data[o] = img.pixels[s]!;
      data.data[o + 1] = img.pixels[s + 1]!;
      data.data[o + 2] = img.pixels[s + 2]!;
      data.data[o + 3] = 255;
    }
  }
  ctx.putImageData(data, 0, 0);
  return canvas.toDataURL("image/png");
}

export function decodePgmBase64(b64: string): GrayImage {
  return decodePgm(base64ToBytes(b64));
}

/**
 * Renders a grayscale map as a PNG data URI, upscaled with hard pixel
 * edges. `tint` maps intensity to an RGBA heat color instead of gray.
 */
export function grayToDataUri(img: GrayImage, scale = 1, tint = false): string {
  const canvas = document.createElement("canvas");
  canvas.width = img.width * scale;
  canvas.height = img.height * scale;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  const data = ctx.createImageData(canvas.width, canvas.height);
  for (let y = 0; y < canvas.height; y++) {
    const sy = Math.floor(y / scale);
    for (let x = 0; x < canvas.width; x++) {
      const v = img.pixels[sy * img.width + Math.floor(x / scale)]!;
      const o = (y * canvas.width + x) * 4;
      if (tint) {
        data.data[o] = 255;
        data.data[o + 1] = 80;
        data.data[o + 2] = 0;
        data.data[o + 3] = v;
      } else {
        data.data[o] = v;
        data.data[o + 1] = v;
        data.data[o + 2] = v;
        data.data[o + 3] = 255;
      }
    }
  }
  ctx.putImageData(data, 0, 0);
  return canvas.toDataURL("image/png");
}
