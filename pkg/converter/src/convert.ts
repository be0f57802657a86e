/**
 * Conversion pipeline: map the source checkpoint onto the 16-layer trunk,
 * translate kernel layouts to OIHW, and emit the CNNW0001 file plus a JSON
 * manifest recording provenance and the preprocessing convention.
 */

import { writeFileSync } from 'node:fs';

import { CnnwLayer, writeCnnw } from './cnnw.js';
import { detectKernelLayout, parseTensorName, toOIHW } from './layout.js';
import { SourceCheckpoint } from './source.js';
import { VGG19_PREPROCESS, vgg19ConvLayers } from './vgg.js';

export class ConversionError extends Error {}

export interface LayerMapping {
  kernel: string;
  bias: string;
  layout: string;
}

export interface ConversionManifest {
  source_checksum: string;
  layer_mapping: Record<string, LayerMapping>;
  ignored_tensors: string[];
  preprocess: {
    channel_means: number[];
    channel_order: string;
    scale: number;
  };
  converted_at: string;
}

export interface ConversionResult {
  cnnw: Buffer;
  manifest: ConversionManifest;
  notices: string[];
}

/** Deterministic timestamp: honor SOURCE_DATE_EPOCH for reproducible output. */
function conversionTimestamp(): string {
  const epoch = process.env.SOURCE_DATE_EPOCH;
  const millis = epoch !== undefined ? Number(epoch) * 1000 : Date.now();
  return new Date(millis).toISOString();
}

export function convertCheckpoint(source: SourceCheckpoint): ConversionResult {
  const byLayer = new Map<string, { kernel?: string; bias?: string }>();
  const ignored: string[] = [];
  for (const name of source.tensors.keys()) {
    const parsed = parseTensorName(name);
    if (parsed === null) {
      ignored.push(name);
      continue;
    }
    const slot = byLayer.get(parsed.layer) ?? {};
    if (slot[parsed.role] !== undefined) {
      throw new ConversionError(
        `${parsed.layer}: both ${slot[parsed.role]} and ${name} map to its ${parsed.role}`,
      );
    }
    slot[parsed.role] = name;
    byLayer.set(parsed.layer, slot);
  }

  const notices = ignored.map((name) => `ignoring non-trunk tensor ${name}`);
  const layers: CnnwLayer[] = [];
  const mapping: Record<string, LayerMapping> = {};
  for (const spec of vgg19ConvLayers()) {
    const slot = byLayer.get(spec.name);
    if (slot?.kernel === undefined) {
      throw new ConversionError(`source is missing the kernel of ${spec.name}`);
    }
    if (slot.bias === undefined) {
      throw new ConversionError(`source is missing the bias of ${spec.name}`);
    }
    const kernel = source.tensors.get(slot.kernel)!;
    const bias = source.tensors.get(slot.bias)!;
    const layout = detectKernelLayout(
      kernel.shape, spec.inChannels, spec.outChannels, spec.name,
    );
    if (bias.shape.length !== 1 || bias.shape[0] !== spec.outChannels) {
      throw new ConversionError(
        `${spec.name}: bias shape [${bias.shape}] does not match ${spec.outChannels} filters`,
      );
    }
    layers.push({
      name: spec.name,
      outChannels: spec.outChannels,
      inChannels: spec.inChannels,
      kernel: toOIHW(kernel.values, layout, spec.inChannels, spec.outChannels),
      bias: bias.values,
    });
    mapping[spec.name] = { kernel: slot.kernel, bias: slot.bias, layout };
  }

  const unmapped = [...byLayer.keys()].filter(
    (name) => !vgg19ConvLayers().some((l) => l.name === name),
  );
  if (unmapped.length > 0) {
    throw new ConversionError(`source has trunk-like tensors for unknown layers: ${unmapped}`);
  }

  return {
    cnnw: writeCnnw(layers),
    manifest: {
      source_checksum: source.checksum,
      layer_mapping: mapping,
      ignored_tensors: ignored.sort(),
      preprocess: {
        channel_means: [...VGG19_PREPROCESS.channel_means],
        channel_order: VGG19_PREPROCESS.channel_order,
        scale: VGG19_PREPROCESS.scale,
      },
      converted_at: conversionTimestamp(),
    },
    notices,
  };
}

export function writeConversion(result: ConversionResult, outPath: string): void {
  writeFileSync(outPath, result.cnnw);
  writeFileSync(`${outPath}.json`, JSON.stringify(result.manifest, null, 2) + '\n');
}
