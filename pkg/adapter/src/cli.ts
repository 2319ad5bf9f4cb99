#!/usr/bin/env node
import { writeFileSync } from "node:fs";

import { extractDocument } from "./extract.js";
import { canonicalJson } from "./serialize.js";
import type { DumpOptions } from "./types.js";
import { validateTokensFile } from "./validate.js";

const USAGE = "usage: pdf-token-dump dump --input <pdf> --output <file> [--pages a:b] [--no-images]";

interface Args {
  input: string;
  output: string;
  options: DumpOptions;
}

function parseArgs(argv: string[]): Args {
  if (argv[0] !== "dump") {
    throw new Error(USAGE);
  }
  let input: string | undefined;
  let output: string | undefined;
  const options: DumpOptions = {};
  for (let i = 1; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--input") {
      input = argv[++i];
    } else if (arg === "--output") {
      output = argv[++i];
    } else if (arg === "--pages") {
      const m = /^(\d+):(\d+)$/.exec(argv[++i] ?? "");
      if (!m) throw new Error("--pages expects a 1-based inclusive range like 2:5");
      options.pages = [Number(m[1]), Number(m[2])];
    } else if (arg === "--no-images") {
      options.images = false;
    } else {
      throw new Error(`unknown argument ${arg}\n${USAGE}`);
    }
  }
  if (!input || !output) throw new Error(USAGE);
  return { input, output, options };
}

async function main(): Promise<number> {
  let args: Args;
  try {
    args = parseArgs(process.argv.slice(2));
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 2;
  }
  try {
    const dump = await extractDocument(args.input, args.options);
    const problems = validateTokensFile(dump);
    if (problems.length > 0) {
      throw new Error(`extracted tokens violate the schema:\n${problems.join("\n")}`);
    }
    writeFileSync(args.output, canonicalJson(dump), "utf-8");
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
  return 0;
}

main().then((code) => {
  process.exitCode = code;
});
