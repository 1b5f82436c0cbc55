/**
 * Map a flax-style pretrained ViT checkpoint (npz of '/'-joined names)
 * onto the canonical parameter names used by the training toolkit, and
 * emit the result as a named-tensor archive.
 *
 * Canonical names: embed.proj.w/b, embed.cls, embed.pos,
 * block.{i}.{norm1,norm2}.{g,b}, block.{i}.attn.{wq,bq,wk,bk,wv,bv,wo,bo},
 * block.{i}.mlp.{w1,b1,w2,b2}, norm.g/b, head.w/b.
 *
 * Source attention projections are stored per head as (D, heads, d_k)
 * kernels; they are fused head-major into single (D, D) matrices, which
 * matches the consumer's column-slice-per-head convention. All other
 * transforms are pure reshapes — with row-major layouts on both sides
 * the payload bytes are preserved exactly.
 */

import * as fs from "node:fs";

import { ArchiveEntry, writeArchive } from "./archive";
import { NpyArray, readNpz } from "./npz";

export type Variant = "tiny" | "base16" | "large16" | "huge14";

export interface VariantShape {
  patchSize: number;
  layers: number;
  hiddenSize: number;
  mlpSize: number;
  heads: number;
}

export const VARIANTS: Record<Variant, VariantShape> = {
  tiny: { patchSize: 4, layers: 2, hiddenSize: 64, mlpSize: 128, heads: 4 },
  base16: { patchSize: 16, layers: 12, hiddenSize: 768, mlpSize: 3072, heads: 12 },
  large16: { patchSize: 16, layers: 24, hiddenSize: 1024, mlpSize: 4096, heads: 16 },
  huge14: { patchSize: 14, layers: 32, hiddenSize: 1280, mlpSize: 5120, heads: 16 },
};

export class ConversionError extends Error {}

interface MappingRule {
  source: string;
  canonical: string;
  /** Expected source shape; null extents are free (resolved from the data). */
  expect: (number | null)[];
  /** Target shape after re-layout; null extents copy the matching free extent. */
  reshape: number[] | null;
  /** Human-readable layout note for the report ("copy" when bytes move as-is). */
  layout: string;
}

export interface MappedTensor {
  source: string;
  canonical: string;
  sourceShape: number[];
  targetShape: number[];
  layout: string;
}

export interface ConversionReport {
  variant: Variant;
  mapped: MappedTensor[];
  skipped: { source: string; shape: number[]; reason: string }[];
  totalSourceTensors: number;
}

/** Ordered rules covering every canonical parameter exactly once. */
export function mappingRules(variant: Variant): MappingRule[] {
  const v = VARIANTS[variant];
  const { patchSize: p, hiddenSize: d, mlpSize: m, heads } = v;
  const dk = d / heads;
  const rules: MappingRule[] = [
    {
      source: "embedding/kernel",
      canonical: "embed.proj.w",
      expect: [p, p, 3, d],
      reshape: [p * p * 3, d],
      layout: `reshape (${p},${p},3,${d})->(${p * p * 3},${d})`,
    },
    {
      source: "embedding/bias",
      canonical: "embed.proj.b",
      expect: [d],
      reshape: null,
      layout: "copy",
    },
    {
      source: "cls",
      canonical: "embed.cls",
      expect: [1, 1, d],
      reshape: [1, d],
      layout: `reshape (1,1,${d})->(1,${d})`,
    },
    {
      source: "Transformer/posembed_input/pos_embedding",
      canonical: "embed.pos",
      expect: [1, null, d],
      reshape: [-1, d],
      layout: `drop leading batch axis`,
    },
  ];
  for (let i = 0; i < v.layers; i++) {
    const block = `Transformer/encoderblock_${i}`;
    const attn = `${block}/MultiHeadDotProductAttention_1`;
    const ln = (src: string, dst: string): MappingRule[] => [
      { source: `${block}/${src}/scale`, canonical: `block.${i}.${dst}.g`, expect: [d], reshape: null, layout: "copy" },
      { source: `${block}/${src}/bias`, canonical: `block.${i}.${dst}.b`, expect: [d], reshape: null, layout: "copy" },
    ];
    rules.push(...ln("LayerNorm_0", "norm1"));
    for (const [src, dst] of [["query", "wq"], ["key", "wk"], ["value", "wv"]] as const) {
      rules.push({
        source: `${attn}/${src}/kernel`,
        canonical: `block.${i}.attn.${dst}`,
        expect: [d, heads, dk],
        reshape: [d, d],
        layout: `fuse heads (${d},${heads},${dk})->(${d},${d})`,
      });
      rules.push({
        source: `${attn}/${src}/bias`,
        canonical: `block.${i}.attn.b${dst[1]}`,
        expect: [heads, dk],
        reshape: [d],
        layout: `fuse heads (${heads},${dk})->(${d})`,
      });
    }
    rules.push({
      source: `${attn}/out/kernel`,
      canonical: `block.${i}.attn.wo`,
      expect: [heads, dk, d],
      reshape: [d, d],
      layout: `fuse heads (${heads},${dk},${d})->(${d},${d})`,
    });
    rules.push({
      source: `${attn}/out/bias`,
      canonical: `block.${i}.attn.bo`,
      expect: [d],
      reshape: null,
      layout: "copy",
    });
    rules.push(...ln("LayerNorm_2", "norm2"));
    rules.push(
      { source: `${block}/MlpBlock_3/Dense_0/kernel`, canonical: `block.${i}.mlp.w1`, expect: [d, m], reshape: null, layout: "copy" },
      { source: `${block}/MlpBlock_3/Dense_0/bias`, canonical: `block.${i}.mlp.b1`, expect: [m], reshape: null, layout: "copy" },
      { source: `${block}/MlpBlock_3/Dense_1/kernel`, canonical: `block.${i}.mlp.w2`, expect: [m, d], reshape: null, layout: "copy" },
      { source: `${block}/MlpBlock_3/Dense_1/bias`, canonical: `block.${i}.mlp.b2`, expect: [d], reshape: null, layout: "copy" },
    );
  }
  rules.push(
    { source: "Transformer/encoder_norm/scale", canonical: "norm.g", expect: [d], reshape: null, layout: "copy" },
    { source: "Transformer/encoder_norm/bias", canonical: "norm.b", expect: [d], reshape: null, layout: "copy" },
    { source: "head/kernel", canonical: "head.w", expect: [d, null], reshape: null, layout: "copy" },
    { source: "head/bias", canonical: "head.b", expect: [null], reshape: null, layout: "copy" },
  );
  return rules;
}

function shapesMatch(expect: (number | null)[], actual: number[]): boolean {
  return (
    expect.length === actual.length &&
    expect.every((e, i) => e === null || e === actual[i])
  );
}

function resolveShape(rule: MappingRule, actual: number[]): number[] {
  if (rule.reshape === null) {
    return [...actual];
  }
  const total = actual.reduce((a, b) => a * b, 1);
  const fixed = rule.reshape.filter((e) => e > 0).reduce((a, b) => a * b, 1);
  return rule.reshape.map((e) => (e > 0 ? e : total / fixed));
}

export function convertArrays(
  arrays: NpyArray[],
  variant: Variant,
): { entries: ArchiveEntry[]; report: ConversionReport } {
  const byName = new Map(arrays.map((a) => [a.name, a]));
  if (byName.size !== arrays.length) {
    throw new ConversionError("source checkpoint has duplicate tensor names");
  }

  const mapped: MappedTensor[] = [];
  const entries: ArchiveEntry[] = [];
  for (const rule of mappingRules(variant)) {
    const src = byName.get(rule.source);
    if (!src) {
      throw new ConversionError(
        `source checkpoint is missing ${rule.source} (needed for ${rule.canonical})`,
      );
    }
    if (!shapesMatch(rule.expect, src.shape)) {
      throw new ConversionError(
        `${rule.source}: shape [${src.shape}] contradicts variant ${variant} ` +
          `expectation [${rule.expect.map((e) => e ?? "*")}]`,
      );
    }
    const targetShape = resolveShape(rule, src.shape);
    entries.push({ name: rule.canonical, shape: targetShape, data: src.data });
    mapped.push({
      source: rule.source,
      canonical: rule.canonical,
      sourceShape: [...src.shape],
      targetShape,
      layout: rule.layout,
    });
    byName.delete(rule.source);
  }

  // Position embedding sanity: token count must be 1 + a square patch grid.
  const pos = mapped.find((t) => t.canonical === "embed.pos");
  if (pos) {
    const tokens = pos.targetShape[0];
    const grid = Math.sqrt(tokens - 1);
    if (!Number.isInteger(grid)) {
      throw new ConversionError(
        `embed.pos has ${tokens} tokens; ${tokens - 1} patches is not a square grid`,
      );
    }
  }

  const skipped = [...byName.values()].map((a) => ({
    source: a.name,
    shape: [...a.shape],
    reason: "no counterpart in the target model",
  }));
  const report: ConversionReport = {
    variant,
    mapped,
    skipped,
    totalSourceTensors: arrays.length,
  };
  return { entries, report };
}

export function convert(
  srcPath: string,
  variant: Variant,
  outPath: string,
): ConversionReport {
  let blob: Buffer;
  try {
    blob = fs.readFileSync(srcPath);
  } catch (err) {
    throw new ConversionError(`cannot read ${srcPath}: ${(err as Error).message}`);
  }
  let arrays: NpyArray[];
  try {
    arrays = readNpz(blob);
  } catch (err) {
    throw new ConversionError(`${srcPath}: ${(err as Error).message}`);
  }
  const { entries, report } = convertArrays(arrays, variant);
  writeArchive(entries, outPath);
  return report;
}

export function formatReport(report: ConversionReport): string {
  const lines: string[] = [];
  for (const t of report.mapped) {
    lines.push(
      `mapped  ${t.source} [${t.sourceShape}] -> ${t.canonical} [${t.targetShape}]  (${t.layout})`,
    );
  }
  for (const s of report.skipped) {
    lines.push(`skipped ${s.source} [${s.shape}]  (${s.reason})`);
  }
  const accounted = report.mapped.length + report.skipped.length;
  lines.push(
    `total: ${report.totalSourceTensors} source tensors, ` +
      `${report.mapped.length} mapped, ${report.skipped.length} skipped ` +
      `(${((100 * accounted) / report.totalSourceTensors).toFixed(0)}% accounted)`,
  );
  return lines.join("\n");
}
