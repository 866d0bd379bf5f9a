import { describe, expect, it } from "vitest";

import { decodeNaeb, encodeNaeb, EmbeddingSet, maxUnitNormDrift } from "../src/naeb.js";

function sample(): EmbeddingSet {
  const rows = [
    [0.6, 0.8, 0.0],
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
  ];
  const features = new Float32Array(rows.flat());
  return {
    modality: "visual",
    features,
    labels: Uint32Array.from([0, 0, 1, 1]),
    dim: 3,
    nClasses: 2,
    classNames: ["cat", "dog"],
  };
}

describe("naeb encoding", () => {
  it("round-trips every field", () => {
    const set = sample();
    const back = decodeNaeb(encodeNaeb(set));
    expect(back.modality).toBe("visual");
    expect(back.dim).toBe(3);
    expect(back.nClasses).toBe(2);
    expect(Array.from(back.labels)).toEqual([0, 0, 1, 1]);
    expect(back.classNames).toEqual(["cat", "dog"]);
    expect(Array.from(back.features)).toEqual(Array.from(set.features));
  });

  it("is byte-deterministic", () => {
    const a = encodeNaeb(sample());
    const b = encodeNaeb(sample());
    expect(a.equals(b)).toBe(true);
  });

  it("lays out the header exactly", () => {
    const buf = encodeNaeb(sample());
    expect(buf.toString("ascii", 0, 4)).toBe("NAEB");
    expect(buf.readUInt8(4)).toBe(1);  // version
    expect(buf.readUInt8(5)).toBe(1);  // dtype float32
    expect(buf.readUInt8(6)).toBe(0);  // visual
    expect(buf.readUInt8(7)).toBe(0);  // reserved
    expect(buf.readUInt32LE(8)).toBe(4);
    expect(buf.readUInt32LE(12)).toBe(3);
    expect(buf.readUInt32LE(16)).toBe(2);
  });

  it("rejects a bad magic with the offset", () => {
    const buf = encodeNaeb(sample());
    buf.write("XAEB", 0, "ascii");
    expect(() => decodeNaeb(buf)).toThrow(/offset 0/);
  });

  it("rejects truncation", () => {
    const buf = encodeNaeb(sample());
    expect(() => decodeNaeb(buf.subarray(0, 25))).toThrow(/truncated/);
  });

  it("rejects out-of-range labels", () => {
    const buf = encodeNaeb(sample());
    buf.writeUInt32LE(7, 20); // first label field
    expect(() => decodeNaeb(buf)).toThrow(/label 7/);
  });

  it("measures unit-norm drift", () => {
    const set = sample();
    expect(maxUnitNormDrift(set)).toBeLessThan(1e-5);
    const bad = { ...set, features: Float32Array.from(set.features, (v) => v * 2) };
    expect(maxUnitNormDrift(bad)).toBeGreaterThan(0.5);
  });

  it("supports empty name tables", () => {
    const set = { ...sample(), classNames: undefined };
    const back = decodeNaeb(encodeNaeb(set));
    expect(back.classNames).toBeUndefined();
  });
});
