import { describe, expect, it } from "vitest";

import { base64ToBytes, decodePgm, decodePpm } from "../src/pgm.js";

function bytesOf(header: string, raster: number[]): Uint8Array {
  const h = new TextEncoder().encode(header);
  const out = new Uint8Array(h.length + raster.length);
  out.set(h);
  out.set(raster, h.length);
  return out;
}

describe("decodePgm", () => {
  it("decodes the writer's canonical header", () => {
    const img = decodePgm(bytesOf("P5\n3 2\n255\n", [0, 64, 128, 192, 255, 7]));
    expect(img.width).toBe(3);
    expect(img.height).toBe(2);
    expect([...img.pixels]).toEqual([0, 64, 128, 192, 255, 7]);
  });

  it("tolerates comments and loose whitespace in the header", () => {
    const img = decodePgm(bytesOf("P5 # map\n # comment line\n  2\t1 \n255\n", [9, 10]));
    expect(img.width).toBe(2);
    expect(img.height).toBe(1);
    expect([...img.pixels]).toEqual([9, 10]);
  });

  it("rejects wrong magic, truncation, and odd maxval", () => {
    expect(() => decodePgm(bytesOf("P6\n1 1\n255\n", [1, 2, 3]))).toThrow(/expected P5/);
    expect(() => decodePgm(bytesOf("P5\n2 2\n255\n", [1, 2, 3]))).toThrow(/truncated/);
    expect(() => decodePgm(bytesOf("P5\n1 1\n65535\n", [1, 1]))).toThrow(/maxval/);
  });
});

describe("decodePpm", () => {
  it("decodes interleaved RGB triples", () => {
    const img = decodePpm(bytesOf("P6\n2 1\n255\n", [255, 0, 0, 0, 0, 255]));
    expect(img.width).toBe(2);
    expect([...img.pixels]).toEqual([255, 0, 0, 0, 0, 255]);
  });
});

describe("base64ToBytes", () => {
  it("round-trips binary data", () => {
    const raw = String.fromCharCode(0, 1, 2, 250, 255);
    expect([...base64ToBytes(btoa(raw))]).toEqual([0, 1, 2, 250, 255]);
  });
});
