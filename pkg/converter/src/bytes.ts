/**
 * Fast f32 <-> little-endian byte conversion.  On little-endian hosts (every
 * platform this tool targets) typed-array views are already LE, so the hot
 * paths are bulk copies; a scalar DataView fallback keeps big-endian hosts
 * correct.
 */

const LITTLE_ENDIAN = new Uint8Array(new Uint32Array([1]).buffer)[0] === 1;

export function float32ToLeBytes(values: Float32Array): Buffer {
  if (LITTLE_ENDIAN) {
    return Buffer.from(new Uint8Array(values.buffer, values.byteOffset, values.length * 4).slice());
  }
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) buf.writeFloatLE(values[i], i * 4);
  return buf;
}

export function leBytesToFloat32(bytes: Buffer, offset: number, count: number): Float32Array {
  if (LITTLE_ENDIAN) {
    // Copy into a fresh, aligned ArrayBuffer; Buffers from the node pool may
    // sit at arbitrary byte offsets.
    const copy = new Uint8Array(count * 4);
    copy.set(bytes.subarray(offset, offset + count * 4));
    return new Float32Array(copy.buffer);
  }
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = bytes.readFloatLE(offset + i * 4);
  return out;
}
