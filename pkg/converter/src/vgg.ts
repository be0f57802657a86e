/** The fixed VGG-19 convolutional trunk the converter targets. */

export interface ConvLayer {
  name: string;
  inChannels: number;
  outChannels: number;
}

const BLOCKS: Array<[number, number]> = [
  [2, 64],
  [2, 128],
  [4, 256],
  [4, 512],
  [4, 512],
];

export function vgg19ConvLayers(): ConvLayer[] {
  const layers: ConvLayer[] = [];
  let inChannels = 3;
  BLOCKS.forEach(([count, width], blockIndex) => {
    for (let i = 1; i <= count; i++) {
      layers.push({ name: `conv${blockIndex + 1}_${i}`, inChannels, outChannels: width });
      inChannels = width;
    }
  });
  return layers;
}

/** Preprocessing convention of the published VGG-19 training pipeline. */
export const VGG19_PREPROCESS = {
  channel_means: [103.939, 116.779, 123.68],
  channel_order: 'bgr',
  scale: 1.0,
} as const;
