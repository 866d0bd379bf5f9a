/**
 * Feature encoders. Two backends:
 *
 * - ClipEncoder wraps a pretrained CLIP checkpoint through
 *   @xenova/transformers (an optional peer dependency; weights must be
 *   available locally or downloadable).
 * - HashEncoder is a fully offline, deterministic stand-in: features are
 *   derived from SHA-256 of the input in counter mode. Useful for format
 *   tests and pipeline dry runs; carries no semantics.
 */

import { createHash } from "node:crypto";
import * as fs from "node:fs";

export interface Encoder {
  readonly id: string;
  readonly dim: number;
  encodeImage(path: string): Promise<Float64Array>;
  encodeText(text: string): Promise<Float64Array>;
}

/** Expand a seed buffer into `dim` floats in [-1, 1) via counter-mode SHA-256. */
function hashToVector(seed: Buffer, dim: number): Float64Array {
  const out = new Float64Array(dim);
  let produced = 0;
  let counter = 0;
  while (produced < dim) {
    const digest = createHash("sha256")
      .update(seed)
      .update(Buffer.from(String(counter++)))
      .digest();
    for (let i = 0; i + 4 <= digest.length && produced < dim; i += 4) {
      out[produced++] = digest.readUInt32LE(i) / 2 ** 31 - 1.0;
    }
  }
  return out;
}

export class HashEncoder implements Encoder {
  readonly id: string;
  readonly dim: number;

  constructor(dim = 64) {
    this.dim = dim;
    this.id = `hash-sha256-${dim}`;
  }

  async encodeImage(path: string): Promise<Float64Array> {
    const bytes = fs.readFileSync(path); // throws for unreadable files
    return hashToVector(createHash("sha256").update(bytes).digest(), this.dim);
  }

  async encodeText(text: string): Promise<Float64Array> {
    return hashToVector(Buffer.from("text:" + text, "utf-8"), this.dim);
  }
}

interface TransformersModule {
  RawImage: { read(input: string): Promise<unknown> };
  AutoProcessor: { from_pretrained(id: string): Promise<any> };
  AutoTokenizer: { from_pretrained(id: string): Promise<any> };
  CLIPVisionModelWithProjection: { from_pretrained(id: string, opts?: object): Promise<any> };
  CLIPTextModelWithProjection: { from_pretrained(id: string, opts?: object): Promise<any> };
}

export class ClipEncoder implements Encoder {
  readonly id: string;
  dim = 0; // known after the first encode
  private mod: TransformersModule | null = null;
  private vision: any = null;
  private text: any = null;
  private processor: any = null;
  private tokenizer: any = null;

  constructor(id = "Xenova/clip-vit-base-patch32") {
    this.id = id;
  }

  private async load(): Promise<TransformersModule> {
    if (this.mod) return this.mod;
    // resolved at runtime only: the dependency is an optional peer
    const moduleName = "@xenova/transformers";
    let mod: TransformersModule;
    try {
      mod = (await import(moduleName)) as unknown as TransformersModule;
    } catch (err) {
      throw new Error(
        "@xenova/transformers is not installed; add it (npm i @xenova/transformers) " +
        "or use the hash encoder (--encoder hash)");
    }
    this.mod = mod;
    return mod;
  }

  async encodeImage(path: string): Promise<Float64Array> {
    const mod = await this.load();
    if (!this.vision) {
      this.processor = await mod.AutoProcessor.from_pretrained(this.id);
      this.vision = await mod.CLIPVisionModelWithProjection.from_pretrained(this.id, { quantized: true });
    }
    const image = await mod.RawImage.read(path);
    const inputs = await this.processor(image);
    const { image_embeds } = await this.vision(inputs);
    const data = Float64Array.from(image_embeds.data as Iterable<number>);
    this.dim = data.length;
    return data;
  }

  async encodeText(text: string): Promise<Float64Array> {
    const mod = await this.load();
    if (!this.text) {
      this.tokenizer = await mod.AutoTokenizer.from_pretrained(this.id);
      this.text = await mod.CLIPTextModelWithProjection.from_pretrained(this.id, { quantized: true });
    }
    const tokens = this.tokenizer([text], { padding: true, truncation: true });
    const { text_embeds } = await this.text(tokens);
    const data = Float64Array.from(text_embeds.data as Iterable<number>);
    this.dim = data.length;
    return data;
  }
}

export function makeEncoder(spec: string, dim = 64): Encoder {
  if (spec === "hash" || spec.startsWith("hash-")) {
    return new HashEncoder(dim);
  }
  return new ClipEncoder(spec);
}
