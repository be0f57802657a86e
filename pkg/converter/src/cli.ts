#!/usr/bin/env node
/**
 * Convert a publicly distributed VGG-19 checkpoint (tfjs-style model.json +
 * shards) into the engine's CNNW0001 weight format, with a JSON manifest
 * sidecar at <out>.json.
 *
 * Usage:
 *   convert-vgg19 <model.json> <out.cnnw>
 *   convert-vgg19 --synthetic-seed 1 <out.cnnw>   # seeded test fixture
 *
 * Set SOURCE_DATE_EPOCH for a reproducible manifest timestamp.
 */

import { mkdtempSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { convertCheckpoint, writeConversion } from './convert.js';
import { loadCheckpoint } from './source.js';
import { writeSyntheticCheckpoint } from './synthetic.js';

function usage(): never {
  console.error('usage: convert-vgg19 [--synthetic-seed N] <model.json> <out.cnnw>');
  process.exit(1);
}

export function main(argv: string[]): number {
  const args = [...argv];
  let syntheticSeed: number | null = null;
  const positional: string[] = [];
  while (args.length > 0) {
    const arg = args.shift()!;
    if (arg === '--synthetic-seed') {
      const value = args.shift();
      if (value === undefined || Number.isNaN(Number(value))) usage();
      syntheticSeed = Number(value);
    } else if (arg === '--help' || arg === '-h') {
      usage();
    } else {
      positional.push(arg);
    }
  }

  let modelJson: string;
  let outPath: string;
  if (syntheticSeed !== null) {
    if (positional.length !== 1) usage();
    outPath = positional[0];
    const dir = mkdtempSync(join(tmpdir(), 'vgg19-synthetic-'));
    modelJson = writeSyntheticCheckpoint(dir, { seed: syntheticSeed });
    console.log(`synthetic checkpoint at ${modelJson}`);
  } else {
    if (positional.length !== 2) usage();
    [modelJson, outPath] = positional;
  }

  try {
    const source = loadCheckpoint(modelJson);
    const result = convertCheckpoint(source);
    for (const notice of result.notices) console.log(`note: ${notice}`);
    writeConversion(result, outPath);
    const layers = Object.keys(result.manifest.layer_mapping).length;
    console.log(`wrote ${outPath} (${layers} conv layers) and ${outPath}.json`);
    return 0;
  } catch (e) {
    console.error(`conversion failed: ${(e as Error).message}`);
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
