/**
 * Deterministic synthetic checkpoints for tests and offline validation: a
 * full VGG-19-shaped tfjs-style source with seeded values, so conversion and
 * the engine cross-check run without the real (large, network-fetched)
 * download.
 */

import { mkdirSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';

import { float32ToLeBytes } from './bytes.js';
import { vgg19ConvLayers } from './vgg.js';

/** mulberry32: small, seedable, identical across platforms. */
export function makeRng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export interface SyntheticOptions {
  seed: number;
  /** kernel value scale; biases draw at a tenth of it */
  scale?: number;
  /** kernel layout to emit, HWIO by default (the tfjs convention) */
  layout?: 'HWIO' | 'OIHW';
  /** append classifier-style tensors that the converter must ignore */
  includeClassifier?: boolean;
}

export function writeSyntheticCheckpoint(dir: string, opts: SyntheticOptions): string {
  const scale = opts.scale ?? 0.05;
  const layout = opts.layout ?? 'HWIO';
  const rng = makeRng(opts.seed);
  mkdirSync(dir, { recursive: true });

  const weights: Array<{ name: string; shape: number[]; dtype: string }> = [];
  const buffers: Buffer[] = [];
  const push = (name: string, shape: number[], values: Float32Array) => {
    weights.push({ name, shape, dtype: 'float32' });
    buffers.push(float32ToLeBytes(values));
  };

  for (const layer of vgg19ConvLayers()) {
    const count = 9 * layer.inChannels * layer.outChannels;
    const kernel = new Float32Array(count);
    for (let i = 0; i < count; i++) kernel[i] = Math.fround((rng() * 2 - 1) * scale);
    const bias = new Float32Array(layer.outChannels);
    for (let i = 0; i < layer.outChannels; i++) {
      bias[i] = Math.fround(rng() * scale * 0.1);
    }
    const shape =
      layout === 'HWIO'
        ? [3, 3, layer.inChannels, layer.outChannels]
        : [layer.outChannels, layer.inChannels, 3, 3];
    push(`${layer.name}/kernel`, shape, reorderIfNeeded(kernel, layout, layer.inChannels, layer.outChannels));
    push(`${layer.name}/bias`, [layer.outChannels], bias);
  }

  if (opts.includeClassifier) {
    const fc = new Float32Array(64);
    for (let i = 0; i < fc.length; i++) fc[i] = Math.fround(rng());
    push('fc6/kernel', [8, 8], fc);
    push('fc6/bias', [8], fc.slice(0, 8));
  }

  const shardName = 'group1-shard1of1.bin';
  writeFileSync(join(dir, shardName), Buffer.concat(buffers));
  const modelJson = {
    format: 'graph-model',
    weightsManifest: [{ paths: [shardName], weights }],
  };
  const modelPath = join(dir, 'model.json');
  writeFileSync(modelPath, JSON.stringify(modelJson) + '\n');
  return modelPath;
}

/** The generator draws in OIHW order; permute into HWIO when emitting it. */
function reorderIfNeeded(
  oihw: Float32Array,
  layout: 'HWIO' | 'OIHW',
  inChannels: number,
  outChannels: number,
): Float32Array {
  if (layout === 'OIHW') return oihw;
  const out = new Float32Array(oihw.length);
  for (let o = 0; o < outChannels; o++) {
    for (let i = 0; i < inChannels; i++) {
      for (let row = 0; row < 3; row++) {
        for (let col = 0; col < 3; col++) {
          out[((row * 3 + col) * inChannels + i) * outChannels + o] =
            oihw[((o * inChannels + i) * 3 + row) * 3 + col];
        }
      }
    }
  }
  return out;
}
