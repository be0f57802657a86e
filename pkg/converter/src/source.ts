/**
 * Reader for the source checkpoint: a tfjs-style weights manifest
 * (model.json with `weightsManifest` groups) plus binary shard files, the
 * layout the public VGG-19 distributions converted for the browser use.
 */

import { createHash } from 'node:crypto';

import { leBytesToFloat32 } from './bytes.js';
import { readFileSync } from 'node:fs';
import { dirname, join } from 'node:path';

export class SourceFormatError extends Error {}

export interface SourceTensor {
  name: string;
  shape: number[];
  values: Float32Array;
}

export interface SourceCheckpoint {
  tensors: Map<string, SourceTensor>;
  /** sha256 over model.json and every shard, in manifest order */
  checksum: string;
}

interface ManifestWeight {
  name: string;
  shape: number[];
  dtype: string;
}

interface ManifestGroup {
  paths: string[];
  weights: ManifestWeight[];
}

export function loadCheckpoint(modelJsonPath: string): SourceCheckpoint {
  const hash = createHash('sha256');
  const modelBytes = readFileSync(modelJsonPath);
  hash.update(modelBytes);
  let parsed: unknown;
  try {
    parsed = JSON.parse(modelBytes.toString('utf-8'));
  } catch (e) {
    throw new SourceFormatError(`${modelJsonPath}: not valid JSON (${(e as Error).message})`);
  }
  const manifest = (parsed as { weightsManifest?: ManifestGroup[] }).weightsManifest;
  if (!Array.isArray(manifest) || manifest.length === 0) {
    throw new SourceFormatError(`${modelJsonPath}: missing weightsManifest`);
  }
  const baseDir = dirname(modelJsonPath);
  const tensors = new Map<string, SourceTensor>();
  for (const group of manifest) {
    if (!Array.isArray(group.paths) || !Array.isArray(group.weights)) {
      throw new SourceFormatError(`${modelJsonPath}: malformed weightsManifest group`);
    }
    const shards = group.paths.map((p) => {
      const bytes = readFileSync(join(baseDir, p));
      hash.update(bytes);
      return bytes;
    });
    const data = Buffer.concat(shards);
    let offset = 0;
    for (const weight of group.weights) {
      if (weight.dtype !== 'float32') {
        throw new SourceFormatError(
          `${weight.name}: dtype ${weight.dtype} unsupported, only float32`,
        );
      }
      const count = weight.shape.reduce((a, b) => a * b, 1);
      if (offset + count * 4 > data.length) {
        throw new SourceFormatError(
          `${weight.name}: shard data exhausted (need ${count * 4} bytes at offset ${offset})`,
        );
      }
      const values = leBytesToFloat32(data, offset, count);
      offset += count * 4;
      if (tensors.has(weight.name)) {
        throw new SourceFormatError(`${weight.name}: duplicate tensor in manifest`);
      }
      tensors.set(weight.name, { name: weight.name, shape: weight.shape, values });
    }
    if (offset !== data.length) {
      throw new SourceFormatError(
        `group with ${group.paths[0]}: ${data.length - offset} unused trailing bytes`,
      );
    }
  }
  return { tensors, checksum: hash.digest('hex') };
}
