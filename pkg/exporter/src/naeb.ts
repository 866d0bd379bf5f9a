/**
 * NAEB embedding-file writer/reader (little-endian).
 *
 * Layout: magic "NAEB"; u8 version = 1; u8 dtype = 1 (float32); u8 modality
 * (0 visual, 1 textual); u8 reserved = 0; u32 rows N; u32 dim D; u32 classes
 * C; N u32 labels; N*D float32 features row-major; u32 name count (0 or C)
 * then that many (u32 length + UTF-8) class names. Equal inputs produce
 * byte-identical files.
 */

import * as fs from "node:fs";

export const NAEB_MAGIC = "NAEB";
export const NAEB_VERSION = 1;
export const DTYPE_F32 = 1;

export type Modality = "visual" | "textual";

export interface EmbeddingSet {
  modality: Modality;
  /** row-major N x dim, rows unit-norm */
  features: Float32Array;
  labels: Uint32Array;
  dim: number;
  nClasses: number;
  classNames?: string[];
}

export function l2NormalizeRow(row: Float64Array): Float64Array {
  let sq = 0;
  for (let i = 0; i < row.length; i++) sq += row[i] * row[i];
  const norm = Math.sqrt(sq);
  if (norm <= 1e-12) throw new Error("cannot normalize a zero feature vector");
  const out = new Float64Array(row.length);
  for (let i = 0; i < row.length; i++) out[i] = row[i] / norm;
  return out;
}

export function encodeNaeb(set: EmbeddingSet): Buffer {
  const n = set.labels.length;
  if (set.features.length !== n * set.dim) {
    throw new Error(`features length ${set.features.length} != rows ${n} * dim ${set.dim}`);
  }
  const names = set.classNames ?? [];
  if (names.length !== 0 && names.length !== set.nClasses) {
    throw new Error(`name table must have 0 or ${set.nClasses} entries`);
  }
  const nameBlobs = names.map((s) => Buffer.from(s, "utf-8"));
  const size =
    8 + 12 + 4 * n + 4 * n * set.dim + 4 +
    nameBlobs.reduce((acc, b) => acc + 4 + b.length, 0);
  const buf = Buffer.alloc(size);
  let pos = 0;
  buf.write(NAEB_MAGIC, pos, "ascii"); pos += 4;
  buf.writeUInt8(NAEB_VERSION, pos++); // version
  buf.writeUInt8(DTYPE_F32, pos++);
  buf.writeUInt8(set.modality === "visual" ? 0 : 1, pos++);
  buf.writeUInt8(0, pos++); // reserved
  buf.writeUInt32LE(n, pos); pos += 4;
  buf.writeUInt32LE(set.dim, pos); pos += 4;
  buf.writeUInt32LE(set.nClasses, pos); pos += 4;
  for (let i = 0; i < n; i++) {
    buf.writeUInt32LE(set.labels[i], pos); pos += 4;
  }
  for (let i = 0; i < set.features.length; i++) {
    buf.writeFloatLE(set.features[i], pos); pos += 4;
  }
  buf.writeUInt32LE(nameBlobs.length, pos); pos += 4;
  for (const blob of nameBlobs) {
    buf.writeUInt32LE(blob.length, pos); pos += 4;
    blob.copy(buf, pos); pos += blob.length;
  }
  return buf;
}

export function writeNaeb(set: EmbeddingSet, path: string): void {
  fs.writeFileSync(path, encodeNaeb(set));
}

export function decodeNaeb(buf: Buffer): EmbeddingSet {
  let pos = 0;
  const need = (n: number, what: string) => {
    if (pos + n > buf.length) {
      throw new Error(`truncated file reading ${what} at byte offset ${pos}`);
    }
  };
  need(4, "magic");
  const magic = buf.toString("ascii", 0, 4);
  if (magic !== NAEB_MAGIC) throw new Error(`bad magic ${JSON.stringify(magic)} at byte offset 0`);
  pos = 4;
  need(4, "header");
  const version = buf.readUInt8(pos++);
  if (version !== NAEB_VERSION) throw new Error(`unsupported version ${version} at byte offset 4`);
  const dtype = buf.readUInt8(pos++);
  if (dtype !== DTYPE_F32) throw new Error(`unsupported dtype ${dtype} at byte offset 5`);
  const modByte = buf.readUInt8(pos++);
  if (modByte !== 0 && modByte !== 1) throw new Error(`bad modality byte ${modByte} at byte offset 6`);
  pos++; // reserved
  need(12, "shape");
  const n = buf.readUInt32LE(pos); pos += 4;
  const dim = buf.readUInt32LE(pos); pos += 4;
  const nClasses = buf.readUInt32LE(pos); pos += 4;
  need(4 * n, "labels");
  const labels = new Uint32Array(n);
  for (let i = 0; i < n; i++) { labels[i] = buf.readUInt32LE(pos); pos += 4; }
  for (let i = 0; i < n; i++) {
    if (labels[i] >= nClasses) throw new Error(`label ${labels[i]} >= class count ${nClasses} at row ${i}`);
  }
  need(4 * n * dim, "features");
  const features = new Float32Array(n * dim);
  for (let i = 0; i < features.length; i++) { features[i] = buf.readFloatLE(pos); pos += 4; }
  need(4, "name count");
  const nameCount = buf.readUInt32LE(pos); pos += 4;
  let classNames: string[] | undefined;
  if (nameCount > 0) {
    if (nameCount !== nClasses) throw new Error(`name count ${nameCount} must be 0 or ${nClasses}`);
    classNames = [];
    for (let i = 0; i < nameCount; i++) {
      need(4, `name ${i} length`);
      const len = buf.readUInt32LE(pos); pos += 4;
      need(len, `name ${i}`);
      classNames.push(buf.toString("utf-8", pos, pos + len)); pos += len;
    }
  }
  return { modality: modByte === 0 ? "visual" : "textual", features, labels, dim, nClasses, classNames };
}

export function readNaeb(path: string): EmbeddingSet {
  return decodeNaeb(fs.readFileSync(path));
}

/** Worst |row norm - 1| across the set (0 for an empty set). */
export function maxUnitNormDrift(set: EmbeddingSet): number {
  let worst = 0;
  const n = set.labels.length;
  for (let r = 0; r < n; r++) {
    let sq = 0;
    for (let c = 0; c < set.dim; c++) {
      const v = set.features[r * set.dim + c];
      sq += v * v;
    }
    worst = Math.max(worst, Math.abs(Math.sqrt(sq) - 1));
  }
  return worst;
}
