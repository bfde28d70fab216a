#!/usr/bin/env node
/** CLI: export --manifest FILE --mode mock|real --out DIR
 *
 * Exit codes: 0 success, 1 usage error, 2 data error.
 */

import { ExportError, runExport } from "./exporter";

function parseArgs(argv: string[]): Record<string, string> {
  const out: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg.startsWith("--")) {
      out[arg.slice(2)] = argv[i + 1] ?? "";
      i++;
    } else if (!out._command) {
      out._command = arg;
    }
  }
  return out;
}

async function main(): Promise<number> {
  const args = parseArgs(process.argv.slice(2));
  if (args._command !== "export" || !args.manifest || !args.out) {
    console.error(
      "usage: export --manifest FILE --mode mock|real --out DIR");
    return 1;
  }
  const mode = (args.mode ?? "mock") as "mock" | "real";
  if (mode !== "mock" && mode !== "real") {
    console.error(`unknown mode ${args.mode}; expected mock or real`);
    return 1;
  }
  try {
    const report = await runExport({
      manifestPath: args.manifest,
      mode,
      outDir: args.out,
    });
    const warned = report.records.filter((r) => r.warnings.length > 0).length;
    console.log(
      `exported ${report.n_records} samples / ${report.n_entities} entities ` +
      `to ${args.out} (${warned} records with warnings)`);
    return 0;
  } catch (e) {
    if (e instanceof ExportError) {
      console.error(`export failed: ${e.message}`);
      return e.message.includes("real mode needs") ? 1 : 2;
    }
    throw e;
  }
}

main().then((code) => process.exit(code));
