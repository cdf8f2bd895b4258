#!/usr/bin/env node
/**
 * Companion CLI: fetch/convert published benchmark datasets and plot recall
 * curves from eval report CSVs.
 *
 *   grlc-datatools fetch --dataset mnist-784-euclidean --out data/mnist
 *   grlc-datatools plot --inputs a.csv b.csv --out fig.png [--logx]
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { getSpec } from "./datasets.js";
import { readEvalCsv } from "./evalcsv.js";
import { fetchConvert } from "./fetch.js";
import { Metric, renderRecallCurves, writePlot } from "./plot.js";

async function main(): Promise<number> {
  const argv = hideBin(process.argv);
  await yargs(argv)
    .scriptName("grlc-datatools")
    .command(
      "fetch",
      "download an ann-benchmarks dataset and convert it to fvecs/ivecs",
      (y) => y
        .option("dataset", { type: "string", demandOption: true,
                             describe: "sift-128-euclidean | mnist-784-euclidean | fashion-mnist-784-euclidean" })
        .option("out", { type: "string", demandOption: true, describe: "output directory" })
        .option("file", { type: "string", describe: "use a local HDF5 instead of downloading" })
        .option("keep-hdf5", { type: "boolean", default: false }),
      async (args) => {
        const spec = getSpec(args.dataset);
        const result = await fetchConvert(spec, args.out,
                                          { localFile: args.file, keepHdf5: args["keep-hdf5"] });
        console.log(`fetch: ${spec.name} -> ${result.basePath} (${result.trainRows} x ${result.dim}), `
          + `${result.queryPath} (${result.testRows} x ${result.dim}), ${result.gtPath}`);
      })
    .command(
      "plot",
      "render recall-vs-candidates curves from eval report CSVs",
      (y) => y
        .option("inputs", { type: "string", array: true, demandOption: true })
        .option("out", { type: "string", demandOption: true, describe: ".svg or .png" })
        .option("metric", { type: "string", default: "recall_10_at_10",
                            choices: ["recall_10_at_10", "recall_at_1"] })
        .option("logx", { type: "boolean", default: false })
        .option("title", { type: "string" }),
      async (args) => {
        const reports = args.inputs.map((p) => readEvalCsv(String(p)));
        const rendered = renderRecallCurves(reports, {
          metric: args.metric as Metric,
          logx: args.logx,
          title: args.title,
        });
        await writePlot(rendered, args.out);
        console.log(`plot: ${reports.length} series -> ${args.out}`);
      })
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      console.error(`error: ${err?.message ?? msg}`);
      process.exit(err ? 1 : 2);
    })
    .parseAsync();
  return 0;
}

main().then((code) => process.exit(code)).catch((err) => {
  console.error(`error: ${err?.message ?? err}`);
  process.exit(1);
});
