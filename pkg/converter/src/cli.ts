#!/usr/bin/env node
/**
 * Convert a flax-style pretrained ViT npz checkpoint into the named-tensor
 * archive format consumed by the training toolkit.
 *
 * Usage:
 *   node dist/cli.js convert --variant base16 --src checkpoint.npz --out weights.vitw
 */

import { ConversionError, Variant, VARIANTS, convert, formatReport } from "./convert";

interface CliOptions {
  variant: Variant;
  src: string;
  out: string;
}

function usage(): string {
  return (
    "usage: convert --variant {tiny|base16|large16|huge14} --src PATH --out PATH"
  );
}

export function parseArgs(argv: string[]): CliOptions {
  if (argv[0] !== "convert") {
    throw new Error(`unknown command ${argv[0] ?? "(none)"}\n${usage()}`);
  }
  const opts: Partial<CliOptions> = {};
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (value === undefined) {
      throw new Error(`missing value for ${flag}\n${usage()}`);
    }
    switch (flag) {
      case "--variant":
        if (!(value in VARIANTS)) {
          throw new Error(`unknown variant ${value}\n${usage()}`);
        }
        opts.variant = value as Variant;
        break;
      case "--src":
        opts.src = value;
        break;
      case "--out":
        opts.out = value;
        break;
      default:
        throw new Error(`unknown flag ${flag}\n${usage()}`);
    }
  }
  if (!opts.variant || !opts.src || !opts.out) {
    throw new Error(`--variant, --src and --out are all required\n${usage()}`);
  }
  return opts as CliOptions;
}

export function main(argv: string[]): number {
  let opts: CliOptions;
  try {
    opts = parseArgs(argv);
  } catch (err) {
    console.error((err as Error).message);
    return 2;
  }
  try {
    const report = convert(opts.src, opts.variant, opts.out);
    console.log(formatReport(report));
    console.log(`wrote ${opts.out}`);
    return 0;
  } catch (err) {
    if (err instanceof ConversionError) {
      console.error(`conversion failed: ${err.message}`);
    } else {
      console.error(`error: ${(err as Error).message}`);
    }
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
