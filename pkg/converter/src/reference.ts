/**
 * The converter's own reference path, used to cross-check converted weights
 * against the engine: a direct conv3x3 + ReLU forward pass, the Gram and
 * channel-mean statistics, P6 PPM encoding and GRMD0001 descriptor parsing.
 * Everything computes in float64 (plain JS numbers) from f32 weight values,
 * mirroring the engine's promotion rule.
 */

import { CnnwLayer } from './cnnw.js';

export interface Tensor3 {
  channels: number;
  height: number;
  width: number;
  /** channel-major, then row, then col */
  data: Float64Array;
}

export function conv3x3Relu(input: Tensor3, layer: CnnwLayer): Tensor3 {
  const { height, width } = input;
  const cin = layer.inChannels;
  const cout = layer.outChannels;
  if (input.channels !== cin) {
    throw new Error(`conv expects ${cin} channels, got ${input.channels}`);
  }
  const out = new Float64Array(cout * height * width);
  for (let o = 0; o < cout; o++) {
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        let acc = layer.bias[o];
        for (let c = 0; c < cin; c++) {
          for (let dy = 0; dy < 3; dy++) {
            const sy = y + dy - 1;
            if (sy < 0 || sy >= height) continue;
            for (let dx = 0; dx < 3; dx++) {
              const sx = x + dx - 1;
              if (sx < 0 || sx >= width) continue;
              acc +=
                layer.kernel[((o * cin + c) * 3 + dy) * 3 + dx] *
                input.data[(c * height + sy) * width + sx];
            }
          }
        }
        out[(o * height + y) * width + x] = acc > 0 ? acc : 0;
      }
    }
  }
  return { channels: cout, height, width, data: out };
}

export function gramMatrix(t: Tensor3): Float64Array {
  const m = t.height * t.width;
  const g = new Float64Array(t.channels * t.channels);
  for (let i = 0; i < t.channels; i++) {
    for (let j = i; j < t.channels; j++) {
      let acc = 0;
      for (let k = 0; k < m; k++) {
        acc += t.data[i * m + k] * t.data[j * m + k];
      }
      g[i * t.channels + j] = acc;
      g[j * t.channels + i] = acc;
    }
  }
  return g;
}

export function channelMeans(t: Tensor3): Float64Array {
  const m = t.height * t.width;
  const out = new Float64Array(t.channels);
  for (let c = 0; c < t.channels; c++) {
    let acc = 0;
    for (let k = 0; k < m; k++) acc += t.data[c * m + k];
    out[c] = acc / m;
  }
  return out;
}

export interface Preprocess {
  channel_means: number[];
  channel_order: string;
  scale: number;
}

/** 8-bit interleaved RGB -> preprocessed (3, H, W) tensor. */
export function preprocessImage(
  pixels: Uint8Array,
  height: number,
  width: number,
  pp: Preprocess,
): Tensor3 {
  const perm = pp.channel_order === 'bgr' ? [2, 1, 0] : [0, 1, 2];
  const data = new Float64Array(3 * height * width);
  for (let c = 0; c < 3; c++) {
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        const raw = pixels[(y * width + x) * 3 + perm[c]];
        data[(c * height + y) * width + x] = raw * pp.scale - pp.channel_means[c];
      }
    }
  }
  return { channels: 3, height, width, data };
}

export function encodePpm(pixels: Uint8Array, height: number, width: number): Buffer {
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, 'ascii');
  return Buffer.concat([header, Buffer.from(pixels)]);
}

export interface DescriptorEntry {
  name: string;
  kind: 'gram' | 'pca' | 'mean';
  n: number;
  m: number;
  /** full n*n matrix for gram/pca (mirrored from the stored triangle), n values for mean */
  values: Float64Array;
}

/** Parser for the engine's GRMD0001 descriptor files. */
export function parseDescriptor(blob: Buffer): DescriptorEntry[] {
  if (blob.subarray(0, 8).toString('ascii') !== 'GRMD0001') {
    throw new Error('bad magic, not a GRMD0001 file');
  }
  let offset = 8;
  const count = blob.readUInt32LE(offset);
  offset += 4;
  const entries: DescriptorEntry[] = [];
  const kinds: Array<DescriptorEntry['kind']> = ['gram', 'pca', 'mean'];
  for (let e = 0; e < count; e++) {
    const nameLen = blob.readUInt16LE(offset);
    offset += 2;
    const name = blob.subarray(offset, offset + nameLen).toString('utf-8');
    offset += nameLen;
    const kind = kinds[blob.readUInt8(offset)];
    const n = blob.readUInt32LE(offset + 1);
    const m = blob.readUInt32LE(offset + 5);
    offset += 9;
    let values: Float64Array;
    if (kind === 'mean') {
      values = new Float64Array(n);
      for (let i = 0; i < n; i++) values[i] = blob.readDoubleLE(offset + i * 8);
      offset += n * 8;
    } else {
      values = new Float64Array(n * n);
      for (let i = 0; i < n; i++) {
        for (let j = i; j < n; j++) {
          const v = blob.readDoubleLE(offset);
          offset += 8;
          values[i * n + j] = v;
          values[j * n + i] = v;
        }
      }
      if (kind === 'pca') {
        const k = blob.readUInt32LE(offset);
        const nFeatures = blob.readUInt32LE(offset + 4);
        offset += 8 + 8 * nFeatures + 8 * k * nFeatures; // mean + basis, unused here
      }
    }
    entries.push({ name, kind, n, m, values });
  }
  if (offset !== blob.length) {
    throw new Error(`${blob.length - offset} trailing bytes in descriptor`);
  }
  return entries;
}
