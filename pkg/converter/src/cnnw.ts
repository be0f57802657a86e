/**
 * Writer and parser for the engine's CNNW0001 weight file format.
 *
 * Little-endian: magic "CNNW0001"; u32 conv-layer count; per layer in trunk
 * order a u16 name length + UTF-8 name, u32 out_channels, u32 in_channels,
 * out*in*3*3 f32 kernel values (out-major, then in, then row, then col), and
 * out f32 biases.  Trailing bytes are an error.
 */

import { float32ToLeBytes, leBytesToFloat32 } from './bytes.js';

export const CNNW_MAGIC = 'CNNW0001';

export interface CnnwLayer {
  name: string;
  outChannels: number;
  inChannels: number;
  /** OIHW order, length out*in*9 */
  kernel: Float32Array;
  bias: Float32Array;
}

export class CnnwFormatError extends Error {}

export function writeCnnw(layers: CnnwLayer[]): Buffer {
  const chunks: Buffer[] = [Buffer.from(CNNW_MAGIC, 'ascii')];
  const count = Buffer.alloc(4);
  count.writeUInt32LE(layers.length);
  chunks.push(count);
  for (const layer of layers) {
    const name = Buffer.from(layer.name, 'utf-8');
    const header = Buffer.alloc(2 + name.length + 8);
    header.writeUInt16LE(name.length, 0);
    name.copy(header, 2);
    header.writeUInt32LE(layer.outChannels, 2 + name.length);
    header.writeUInt32LE(layer.inChannels, 6 + name.length);
    chunks.push(header);
    const expected = layer.outChannels * layer.inChannels * 9;
    if (layer.kernel.length !== expected || layer.bias.length !== layer.outChannels) {
      throw new CnnwFormatError(`${layer.name}: kernel/bias sizes do not match the dims`);
    }
    chunks.push(float32ToLeBytes(layer.kernel));
    chunks.push(float32ToLeBytes(layer.bias));
  }
  return Buffer.concat(chunks);
}

export function parseCnnw(blob: Buffer): CnnwLayer[] {
  if (blob.subarray(0, 8).toString('ascii') !== CNNW_MAGIC) {
    throw new CnnwFormatError('bad magic, not a CNNW0001 file');
  }
  let offset = 8;
  const need = (n: number, what: string) => {
    if (offset + n > blob.length) {
      throw new CnnwFormatError(`truncated while reading ${what} at byte ${offset}`);
    }
  };
  need(4, 'layer count');
  const count = blob.readUInt32LE(offset);
  offset += 4;
  const layers: CnnwLayer[] = [];
  for (let i = 0; i < count; i++) {
    need(2, `layer ${i} name length`);
    const nameLen = blob.readUInt16LE(offset);
    offset += 2;
    need(nameLen + 8, `layer ${i} header`);
    const name = blob.subarray(offset, offset + nameLen).toString('utf-8');
    offset += nameLen;
    const outChannels = blob.readUInt32LE(offset);
    const inChannels = blob.readUInt32LE(offset + 4);
    offset += 8;
    const kernelBytes = outChannels * inChannels * 9 * 4;
    need(kernelBytes + outChannels * 4, `${name} payload`);
    const kernel = leBytesToFloat32(blob, offset, outChannels * inChannels * 9);
    offset += kernelBytes;
    const bias = leBytesToFloat32(blob, offset, outChannels);
    offset += outChannels * 4;
    layers.push({ name, outChannels, inChannels, kernel, bias });
  }
  if (offset !== blob.length) {
    throw new CnnwFormatError(`${blob.length - offset} trailing bytes after last layer`);
  }
  return layers;
}

