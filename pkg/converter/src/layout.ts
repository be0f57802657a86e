/**
 * The one place where source naming schemes and kernel memory layouts are
 * translated.  Anything not listed here aborts the conversion; the converter
 * never guesses.
 */

export class LayoutError extends Error {}

/** Kernel layouts the converter understands, keyed by shape signature. */
export type KernelLayout = 'HWIO' | 'OIHW';

/**
 * Source tensor names that map onto a trunk layer.  The layer name itself
 * ("conv3_2") must appear; the suffix decides kernel vs bias.  Path prefixes
 * ("vgg19/…/") are ignored.
 */
const KERNEL_SUFFIXES = ['kernel', 'weights', 'weight', 'W'];
const BIAS_SUFFIXES = ['bias', 'biases', 'b'];

export interface ParsedName {
  layer: string;
  role: 'kernel' | 'bias';
}

export function parseTensorName(name: string): ParsedName | null {
  const match = name.match(/(?:^|\/)(conv\d_\d)(?:[/._:-](.+))?$/);
  if (!match) return null;
  const [, layer, suffix] = match;
  if (suffix === undefined) return null;
  if (KERNEL_SUFFIXES.includes(suffix)) return { layer, role: 'kernel' };
  if (BIAS_SUFFIXES.includes(suffix)) return { layer, role: 'bias' };
  return null;
}

/**
 * Decide the kernel layout from its shape, given the layer's expected
 * channel counts.  HWIO is the TF/tfjs convention, OIHW the caffe/torch one.
 */
export function detectKernelLayout(
  shape: number[],
  inChannels: number,
  outChannels: number,
  layer: string,
): KernelLayout {
  const sig = shape.join('x');
  if (sig === `3x3x${inChannels}x${outChannels}`) return 'HWIO';
  if (sig === `${outChannels}x${inChannels}x3x3`) return 'OIHW';
  throw new LayoutError(
    `${layer}: kernel shape [${shape}] matches neither HWIO [3,3,${inChannels},${outChannels}] ` +
      `nor OIHW [${outChannels},${inChannels},3,3]`,
  );
}

/**
 * Reorder a kernel's values into OIHW (out, in, row, col), the order the
 * CNNW0001 format stores.
 */
export function toOIHW(
  values: Float32Array,
  layout: KernelLayout,
  inChannels: number,
  outChannels: number,
): Float32Array {
  if (layout === 'OIHW') return values;
  // HWIO: index = ((row * 3 + col) * in + i) * out + o
  const out = new Float32Array(values.length);
  let target = 0;
  for (let o = 0; o < outChannels; o++) {
    for (let i = 0; i < inChannels; i++) {
      for (let row = 0; row < 3; row++) {
        for (let col = 0; col < 3; col++) {
          out[target++] = values[((row * 3 + col) * inChannels + i) * outChannels + o];
        }
      }
    }
  }
  return out;
}
