import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { HashEncoder } from "../src/encoder.js";
import {
  DEFAULT_TEMPLATES,
  discoverClasses,
  exportImages,
  exportPrompts,
  fillTemplate,
} from "../src/export.js";
import { maxUnitNormDrift, readNaeb } from "../src/naeb.js";

let root: string;
const CLASSES = ["apple", "banana", "cherry"];

beforeAll(() => {
  root = fs.mkdtempSync(path.join(os.tmpdir(), "naeb-export-"));
  for (const [i, name] of CLASSES.entries()) {
    const dir = path.join(root, name);
    fs.mkdirSync(dir);
    for (let k = 0; k < 2 + i; k++) {
      // fake image payloads: the hash encoder only reads bytes
      fs.writeFileSync(path.join(dir, `img_${k}.png`), `pixels-${name}-${k}`);
    }
    fs.writeFileSync(path.join(dir, "notes.txt"), "not an image");
  }
});

afterAll(() => {
  fs.rmSync(root, { recursive: true, force: true });
});

describe("directory discovery", () => {
  it("lists class subdirectories in sorted order", () => {
    expect(discoverClasses(root)).toEqual(CLASSES);
  });

  it("fills templates with space-separated class names", () => {
    expect(fillTemplate("a photo of a {class}.", "red_fox"))
      .toBe("a photo of a red fox.");
  });

  it("ships fifteen default templates", () => {
    expect(DEFAULT_TEMPLATES.length).toBe(15);
    expect(new Set(DEFAULT_TEMPLATES).size).toBe(15);
  });
});

describe("image export", () => {
  it("writes one labeled row per image with unit norms", async () => {
    const out = path.join(root, "visual.naeb");
    const manifest = await exportImages({
      imageRoot: root, encoder: new HashEncoder(32),
      visualOut: out, textualOut: out,
    });
    expect(manifest.imageRows).toBe(2 + 3 + 4);
    expect(manifest.classes).toEqual(CLASSES);
    expect(manifest.skipped).toEqual([]);
    const set = readNaeb(out);
    expect(set.modality).toBe("visual");
    expect(set.nClasses).toBe(3);
    expect(Array.from(set.labels)).toEqual([0, 0, 1, 1, 1, 2, 2, 2, 2]);
    expect(maxUnitNormDrift(set)).toBeLessThan(1e-5);
    expect(set.classNames).toEqual(CLASSES);
  });

  it("re-exports byte-identically", async () => {
    const out1 = path.join(root, "v1.naeb");
    const out2 = path.join(root, "v2.naeb");
    const enc = new HashEncoder(16);
    await exportImages({ imageRoot: root, encoder: enc, visualOut: out1, textualOut: out1 });
    await exportImages({ imageRoot: root, encoder: enc, visualOut: out2, textualOut: out2 });
    expect(fs.readFileSync(out1).equals(fs.readFileSync(out2))).toBe(true);
  });

  it("skips unreadable images and reports them", async () => {
    const dir = path.join(root, CLASSES[0]);
    const ghost = path.join(dir, "img_zzz.png");
    fs.mkdirSync(ghost); // a directory with an image name: unreadable as a file
    try {
      const out = path.join(root, "skip.naeb");
      const manifest = await exportImages({
        imageRoot: root, encoder: new HashEncoder(16),
        visualOut: out, textualOut: out,
      });
      expect(manifest.skipped).toEqual([ghost]);
      expect(readNaeb(out).labels.length).toBe(9);
    } finally {
      fs.rmdirSync(ghost);
    }
  });

  it("rejects a class directory with no images", async () => {
    const empty = fs.mkdtempSync(path.join(os.tmpdir(), "naeb-empty-"));
    fs.mkdirSync(path.join(empty, "void"));
    await expect(exportImages({
      imageRoot: empty, encoder: new HashEncoder(8),
      visualOut: path.join(empty, "x.naeb"), textualOut: path.join(empty, "x.naeb"),
    })).rejects.toThrow(/no images/);
    fs.rmSync(empty, { recursive: true, force: true });
  });
});

describe("prompt export", () => {
  it("writes one row per template and class", async () => {
    const out = path.join(root, "textual.naeb");
    const manifest = await exportPrompts({
      imageRoot: root, encoder: new HashEncoder(32),
      visualOut: out, textualOut: out,
      templates: ["a photo of a {class}.", "an image of a {class}."],
    });
    expect(manifest.promptRows).toBe(2 * 3);
    const set = readNaeb(out);
    expect(set.modality).toBe("textual");
    expect(Array.from(set.labels)).toEqual([0, 0, 1, 1, 2, 2]);
    expect(maxUnitNormDrift(set)).toBeLessThan(1e-5);
  });

  it("duplicate templates give duplicate rows", async () => {
    const out = path.join(root, "dup.naeb");
    await exportPrompts({
      imageRoot: root, encoder: new HashEncoder(16),
      visualOut: out, textualOut: out,
      templates: ["a photo of a {class}.", "a photo of a {class}."],
    });
    const set = readNaeb(out);
    const row = (r: number) => Array.from(set.features.slice(r * 16, (r + 1) * 16));
    expect(row(0)).toEqual(row(1));
  });

  it("defaults to the fifteen-template list", async () => {
    const out = path.join(root, "default.naeb");
    const manifest = await exportPrompts({
      imageRoot: root, encoder: new HashEncoder(8),
      visualOut: out, textualOut: out,
    });
    expect(manifest.templates).toBe(15);
    expect(readNaeb(out).labels.length).toBe(15 * 3);
  });

  it("rejects an empty template list", async () => {
    await expect(exportPrompts({
      imageRoot: root, encoder: new HashEncoder(8),
      visualOut: "x", textualOut: "x", templates: [],
    })).rejects.toThrow(/template/);
  });
});

describe("cross-package round trip", () => {
  it("files pass the refinement package's reader checks", async () => {
    let python: string | null = "python3";
    try {
      execFileSync(python, ["-c", "import node_adapter"], { stdio: "pipe" });
    } catch {
      python = null;
    }
    if (!python) return; // primary package absent; covered in its own CI

    const visual = path.join(root, "cross_v.naeb");
    const textual = path.join(root, "cross_t.naeb");
    const enc = new HashEncoder(24);
    await exportImages({ imageRoot: root, encoder: enc, visualOut: visual, textualOut: visual });
    await exportPrompts({ imageRoot: root, encoder: enc, visualOut: textual, textualOut: textual });

    const script = `
import sys
from node_adapter import read_naeb
v = read_naeb(sys.argv[1])
t = read_naeb(sys.argv[2])
v.check_unit_rows(1e-5)
t.check_unit_rows(1e-5)
assert v.modality == "visual" and t.modality == "textual"
assert v.n_classes == t.n_classes == 3
assert v.class_names == t.class_names == ["apple", "banana", "cherry"]
print("ok")
`;
    const out = execFileSync(python, ["-c", script, visual, textual], { encoding: "utf-8" });
    expect(out.trim()).toBe("ok");
  });
});
