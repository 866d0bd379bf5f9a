/**
 * Export pipelines: class-per-subdirectory image trees and prompt templates
 * become NAEB files the refinement package reads directly.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Encoder } from "./encoder.js";
import { EmbeddingSet, l2NormalizeRow, writeNaeb } from "./naeb.js";

/** The default prompt templates; 15 of them, the best-performing count. */
export const DEFAULT_TEMPLATES: readonly string[] = [
  "a photo of a {class}.",
  "a photo of the {class}.",
  "a close-up photo of a {class}.",
  "a cropped photo of a {class}.",
  "a blurry photo of a {class}.",
  "a bright photo of a {class}.",
  "a dark photo of a {class}.",
  "a low resolution photo of a {class}.",
  "a good photo of a {class}.",
  "a bad photo of a {class}.",
  "a photo of a small {class}.",
  "a photo of a large {class}.",
  "a photo of one {class}.",
  "an image of a {class}.",
  "a drawing of a {class}.",
];

const IMAGE_EXTENSIONS = new Set([".jpg", ".jpeg", ".png", ".webp", ".bmp", ".gif"]);

export interface ExportSpec {
  imageRoot: string;
  /** explicit class list; discovered from subdirectory names when omitted */
  classNames?: string[];
  templates?: string[];
  encoder: Encoder;
  visualOut: string;
  textualOut: string;
}

export interface ExportManifest {
  encoder: string;
  dim: number;
  classes: string[];
  imageRows: number;
  promptRows: number;
  templates: number;
  skipped: string[];
}

export function discoverClasses(root: string): string[] {
  const entries = fs.readdirSync(root, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort();
  if (entries.length === 0) throw new Error(`no class subdirectories under ${root}`);
  return entries;
}

export function listImages(root: string, className: string): string[] {
  const dir = path.join(root, className);
  return fs.readdirSync(dir)
    .filter((f) => IMAGE_EXTENSIONS.has(path.extname(f).toLowerCase()))
    .sort()
    .map((f) => path.join(dir, f));
}

export function fillTemplate(template: string, className: string): string {
  return template.replaceAll("{class}", className.replaceAll("_", " "));
}

function toSet(rows: Float64Array[], labels: number[], dim: number,
               nClasses: number, names: string[],
               modality: "visual" | "textual"): EmbeddingSet {
  const features = new Float32Array(rows.length * dim);
  rows.forEach((row, r) => {
    const unit = l2NormalizeRow(row);
    for (let c = 0; c < dim; c++) features[r * dim + c] = unit[c];
  });
  return {
    modality,
    features,
    labels: Uint32Array.from(labels),
    dim,
    nClasses,
    classNames: names,
  };
}

/** Encode every image under root/<class>/ in sorted order; unreadable files
 * are skipped, warned about, and listed in the manifest. */
export async function exportImages(spec: ExportSpec): Promise<ExportManifest> {
  const names = spec.classNames ?? discoverClasses(spec.imageRoot);
  const rows: Float64Array[] = [];
  const labels: number[] = [];
  const skipped: string[] = [];
  for (let label = 0; label < names.length; label++) {
    const images = listImages(spec.imageRoot, names[label]);
    if (images.length === 0) {
      throw new Error(`class directory ${names[label]} holds no images`);
    }
    for (const image of images) {
      try {
        rows.push(await spec.encoder.encodeImage(image));
        labels.push(label);
      } catch (err) {
        console.warn(`skipping unreadable image ${image}: ${(err as Error).message}`);
        skipped.push(image);
      }
    }
  }
  if (rows.length === 0) throw new Error("no image could be encoded");
  const dim = rows[0].length;
  writeNaeb(toSet(rows, labels, dim, names.length, names, "visual"), spec.visualOut);
  return {
    encoder: spec.encoder.id,
    dim,
    classes: names,
    imageRows: rows.length,
    promptRows: 0,
    templates: 0,
    skipped,
  };
}

/** Encode one prompt per (template, class) pair; labels follow the class. */
export async function exportPrompts(spec: ExportSpec): Promise<ExportManifest> {
  const names = spec.classNames ?? discoverClasses(spec.imageRoot);
  const templates = spec.templates ?? [...DEFAULT_TEMPLATES];
  if (templates.length === 0) throw new Error("template list must not be empty");
  const rows: Float64Array[] = [];
  const labels: number[] = [];
  for (let label = 0; label < names.length; label++) {
    for (const template of templates) {
      rows.push(await spec.encoder.encodeText(fillTemplate(template, names[label])));
      labels.push(label);
    }
  }
  const dim = rows[0].length;
  writeNaeb(toSet(rows, labels, dim, names.length, names, "textual"), spec.textualOut);
  return {
    encoder: spec.encoder.id,
    dim,
    classes: names,
    imageRows: 0,
    promptRows: rows.length,
    templates: templates.length,
    skipped: [],
  };
}
