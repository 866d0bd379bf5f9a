#!/usr/bin/env node
/**
 * naeb-export: encode images and prompt templates into NAEB files.
 *
 *   naeb-export images  --root DIR --out FILE [--encoder ID] [--dim N]
 *   naeb-export prompts --root DIR --out FILE [--encoder ID] [--dim N]
 *                       [--templates FILE] [--classes a,b,c]
 *
 * --encoder takes a model identifier for the CLIP backend, or "hash" for
 * the offline deterministic backend (--dim sets its width). The manifest
 * JSON is printed to stdout.
 */

import * as fs from "node:fs";

import { makeEncoder } from "./encoder.js";
import { exportImages, exportPrompts, ExportSpec } from "./export.js";

function parseArgs(argv: string[]): { command: string; flags: Map<string, string> } {
  const [command, ...rest] = argv;
  const flags = new Map<string, string>();
  for (let i = 0; i < rest.length; i += 2) {
    const key = rest[i];
    if (!key.startsWith("--") || i + 1 >= rest.length) {
      throw new Error(`flags come in --name value pairs; saw ${key}`);
    }
    flags.set(key.slice(2), rest[i + 1]);
  }
  return { command, flags };
}

async function main(): Promise<number> {
  let parsed;
  try {
    parsed = parseArgs(process.argv.slice(2));
  } catch (err) {
    console.error(`usage error: ${(err as Error).message}`);
    return 2;
  }
  const { command, flags } = parsed;
  if (command !== "images" && command !== "prompts") {
    console.error("usage: naeb-export {images|prompts} --root DIR --out FILE ...");
    return 2;
  }
  const root = flags.get("root");
  const out = flags.get("out");
  if (!root || !out) {
    console.error("usage error: --root and --out are required");
    return 2;
  }
  const encoder = makeEncoder(flags.get("encoder") ?? "hash",
                              Number(flags.get("dim") ?? "64"));
  const spec: ExportSpec = {
    imageRoot: root,
    encoder,
    visualOut: out,
    textualOut: out,
    classNames: flags.get("classes")?.split(",").map((s) => s.trim()),
  };
  const templateFile = flags.get("templates");
  if (templateFile) {
    spec.templates = fs.readFileSync(templateFile, "utf-8")
      .split("\n").map((s) => s.trim()).filter(Boolean);
  }
  try {
    const manifest = command === "images"
      ? await exportImages(spec)
      : await exportPrompts(spec);
    console.log(JSON.stringify(manifest));
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

main().then((code) => process.exit(code));
