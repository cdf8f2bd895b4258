"""Command-line surface: synth, build, query, eval, classify, inspect.

Every subcommand accepts --config/--seed/--deterministic/--threads; flags
override config values. Thread caps are exported to the BLAS pool before
numpy is first imported, which is why all heavy imports happen inside the
handlers. Exit code 0 on success; failures print one machine-parseable
'error: <Type>: <message>' line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                   "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def _prescan_threads(argv: list[str]) -> None:
    """Resolve the thread cap from argv/config and export it pre-import."""
    threads = None
    deterministic = False
    config_path = None
    it = iter(range(len(argv)))
    for i in it:
        arg = argv[i]
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
        elif arg == "--deterministic":
            deterministic = True
        elif arg == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif arg.startswith("--config="):
            config_path = arg.split("=", 1)[1]
    if threads is None and config_path and os.path.exists(config_path):
        cp = configparser.ConfigParser()
        cp.read(config_path)
        if cp.has_option("run", "threads"):
            threads = cp.get("run", "threads")
        if cp.has_option("run", "deterministic"):
            deterministic = deterministic or cp.get("run", "deterministic").lower() in (
                "1", "true", "yes", "on")
    if deterministic:
        threads = "1"
    if threads is not None and int(threads) > 0:
        for var in THREAD_ENV_VARS:
            os.environ.setdefault(var, str(int(threads)))


# ---------------------------------------------------------------------------
# Parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="single-threaded, bit-reproducible mode")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")


def _add_hp_flags(p: argparse.ArgumentParser) -> None:
    from dataclasses import fields

    from .core import HyperParams

    group = p.add_argument_group("hyperparameters")
    for f in fields(HyperParams):
        if f.name == "seed":
            continue  # --seed is a common flag
        flag = "--" + f.name.replace("_", "-")
        default = getattr(HyperParams(), f.name)
        if isinstance(default, bool):
            group.add_argument(flag, dest=f.name, default=None,
                               action=argparse.BooleanOptionalAction)
        else:
            group.add_argument(flag, dest=f.name, type=type(default), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grlc",
        description="Learned Gaussian space-partitioning index for ANN search")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic mixture")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--components", type=int, default=10)
    p.add_argument("--spread", type=float, default=0.1)
    p.add_argument("--out", required=True, help="output stem for .fvecs/.labels")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="train Gaussians and write the index")
    _add_common(p)
    p.add_argument("--data", default=None, help="base vectors (.fvecs)")
    p.add_argument("--out", default=None, help="index output path (.grlc)")
    p.add_argument("--train-log", default=None, help="training CSV (default <out>.train.csv)")
    p.add_argument("--no-figure", action="store_true",
                   help="skip the loss-curve figure next to the training CSV")
    _add_hp_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="run kNN queries against an index")
    _add_common(p)
    p.add_argument("--index", default=None)
    p.add_argument("--data", default=None, help="base vectors the index was built on")
    p.add_argument("--queries", default=None)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--bucket-mode", choices=("argmin", "threshold", "topk"), default="argmin")
    p.add_argument("--topk", type=int, default=3, help="bucket count in topk mode")
    p.add_argument("--probe-ratio", type=float, default=None)
    p.add_argument("--max-candidates", type=int, default=None)
    p.add_argument("--out", default=None, help="results CSV")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="recall/probe sweep over budgets")
    _add_common(p)
    p.add_argument("--index", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--queries", default=None)
    p.add_argument("--gt", default=None, help="ground-truth ids (.ivecs); computed if absent")
    p.add_argument("--budgets", default=None,
                   help="comma list like argmin:0.1,threshold:0.3,topk4:1.0[@cap]")
    p.add_argument("--label", default=None, help="series label in the report")
    p.add_argument("--out", default=None, help="report CSV (figure lands beside it)")
    p.add_argument("--no-figure", action="store_true")
    p.add_argument("--logx", action="store_true", help="log-scaled candidate axis")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="majority-vote classification")
    _add_common(p)
    p.add_argument("--index", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--queries", default=None)
    p.add_argument("--query-labels", default=None)
    p.add_argument("--variant", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--probe-ratio", type=float, default=None)
    p.add_argument("--topk", type=int, default=3)
    p.add_argument("--out", default=None, help="per-query predictions CSV")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("inspect", help="print index structure statistics")
    _add_common(p)
    p.add_argument("--index", default=None)
    p.set_defaults(func=cmd_inspect)

    return parser


# ---------------------------------------------------------------------------
# Option resolution


def _load_config(args) -> dict:
    if not getattr(args, "config", None):
        return {"run": {}, "paths": {}, "hyperparams": {}}
    from .dataio import parse_config

    return parse_config(args.config)


def _resolve_run(args, cfg) -> tuple[int | None, bool, str]:
    seed = args.seed if args.seed is not None else cfg["run"].get("seed")
    deterministic = (args.deterministic if args.deterministic is not None
                     else cfg["run"].get("deterministic", False))
    label = cfg["run"].get("label", "grlc")
    return seed, bool(deterministic), label


def _resolve_hp(args, cfg):
    from dataclasses import fields

    from .core import HyperParams

    values = dict(cfg["hyperparams"])
    for f in fields(HyperParams):
        given = getattr(args, f.name, None)
        if given is not None:
            values[f.name] = given
    seed, _, _ = _resolve_run(args, cfg)
    if seed is not None:
        values["seed"] = seed
    return HyperParams.from_dict(values)


def _path(args, cfg, name: str, required: bool = True) -> str | None:
    val = getattr(args, name, None) or cfg["paths"].get(name)
    if required and not val:
        raise ValueError(f"missing required path --{name.replace('_', '-')}")
    return val


# ---------------------------------------------------------------------------
# Handlers


def cmd_synth(args) -> int:
    from .dataio import save_fvecs, save_labels, synth_mixture

    cfg = _load_config(args)
    seed, _, _ = _resolve_run(args, cfg)
    stem = args.out[:-6] if args.out.endswith(".fvecs") else args.out
    ds = synth_mixture(args.n, args.d, args.components, args.spread,
                       seed if seed is not None else 0)
    save_fvecs(stem + ".fvecs", ds.vectors)
    save_labels(stem + ".labels", ds.labels)
    print(f"synth: wrote {stem}.fvecs ({ds.n} x {ds.vectors.d}) and {stem}.labels")
    return 0


def cmd_build(args) -> int:
    from .dataio import load_fvecs
    from .index import build_index, save_index
    from .training import fit

    cfg = _load_config(args)
    hp = _resolve_hp(args, cfg)
    data_path = _path(args, cfg, "data")
    out_path = _path(args, cfg, "out")
    train_log = (getattr(args, "train_log", None) or cfg["paths"].get("train_log")
                 or out_path + ".train.csv")

    X = load_fvecs(data_path)
    state = fit(X, hp, csv_path=train_log)
    index = build_index(X, state.gaussians, hp, norm=state.norm)
    save_index(index, out_path)
    last = state.loss_history[-1]
    msg = (f"build: {index.K} buckets after epoch {state.epoch} "
           f"(total loss {last.total:.6g}); index -> {out_path}, log -> {train_log}")
    if not args.no_figure:
        from .plotting import plot_training_log

        fig_path = os.path.splitext(train_log)[0] + ".png"
        plot_training_log(train_log, fig_path)
        msg += f", figure -> {fig_path}"
    print(msg)
    return 0


def _load_index_with_data(args, cfg):
    from .dataio import load_fvecs
    from .index import load_index

    index_path = _path(args, cfg, "index")
    data_path = _path(args, cfg, "data")
    return load_index(index_path, data=load_fvecs(data_path))


def _budget_from_args(args, hp_probe_default: float):
    from .query import QueryBudget

    ratio = args.probe_ratio if args.probe_ratio is not None else hp_probe_default
    return QueryBudget(bucket_mode=args.bucket_mode, topk_k=args.topk,
                       probe_ratio=ratio, max_candidates=args.max_candidates)


def cmd_query(args) -> int:
    import csv

    from .dataio import load_fvecs
    from .query import search

    cfg = _load_config(args)
    index = _load_index_with_data(args, cfg)
    queries = load_fvecs(_path(args, cfg, "queries"))
    budget = _budget_from_args(args, index.hp.probe_ratio)
    out_path = _path(args, cfg, "out")

    with open(out_path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["query_id", "rank", "neighbor_id", "distance",
                     "candidates_examined", "bins_probed", "buckets_probed"])
        for qi in range(queries.n):
            res = search(queries.data[qi], index, args.k, budget)
            for rank, (nid, dist) in enumerate(zip(res.ids, res.distances)):
                wr.writerow([qi, rank, int(nid), repr(float(dist)),
                             res.candidates_examined, res.bins_probed,
                             res.buckets_probed])
    print(f"query: {queries.n} queries x k={args.k} -> {out_path}")
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from .dataio import load_fvecs, load_ivecs
    from .evaluation import GroundTruth, bench_sweep, write_eval_csv
    from .query import parse_budget

    cfg = _load_config(args)
    _, deterministic, label = _resolve_run(args, cfg)
    if args.label:
        label = args.label
    index = _load_index_with_data(args, cfg)
    queries = load_fvecs(_path(args, cfg, "queries"))
    budget_spec = args.budgets or cfg["paths"].get("budgets")
    if not budget_spec:
        raise ValueError("missing --budgets")
    budgets = [parse_budget(tok) for tok in budget_spec.split(",")]
    out_path = _path(args, cfg, "out")

    gt = None
    gt_path = args.gt or cfg["paths"].get("gt")
    if gt_path:
        ids = load_ivecs(gt_path)[:, :10]
        gt = GroundTruth(ids=ids.astype(np.int64), dists=np.zeros(ids.shape))

    report = bench_sweep(index.require_data(), queries.as_f64(), index, budgets,
                         label=label, deterministic=deterministic, gt=gt)
    write_eval_csv(report, out_path)
    lines = [f"eval: {len(report.rows)} budget rows -> {out_path}"]
    if not args.no_figure:
        from .plotting import plot_eval_reports

        fig_path = os.path.splitext(out_path)[0] + ".png"
        plot_eval_reports([out_path], fig_path, logx=args.logx)
        lines.append(f"figure -> {fig_path}")
    print("; ".join(lines))
    return 0


def cmd_classify(args) -> int:
    import csv

    import numpy as np

    from .dataio import load_fvecs, load_labels
    from .evaluation import variant_budget
    from .query import classify

    cfg = _load_config(args)
    index = _load_index_with_data(args, cfg)
    labels = load_labels(_path(args, cfg, "labels"))
    queries = load_fvecs(_path(args, cfg, "queries"))
    qlab_path = getattr(args, "query_labels", None) or cfg["paths"].get("query_labels")
    q_labels = load_labels(qlab_path) if qlab_path else None
    ratio = args.probe_ratio if args.probe_ratio is not None else index.hp.probe_ratio
    budget = variant_budget(args.variant, probe_ratio=ratio, topk_k=args.topk)
    out_path = _path(args, cfg, "out")

    preds = np.array([classify(queries.data[qi], index, labels, budget)
                      for qi in range(queries.n)])
    with open(out_path, "w", newline="") as f:
        wr = csv.writer(f)
        header = ["query_id", "predicted"] + (["true"] if q_labels is not None else [])
        wr.writerow(header)
        for qi, pred in enumerate(preds):
            row = [qi, int(pred)]
            if q_labels is not None:
                row.append(int(q_labels[qi]))
            wr.writerow(row)
    msg = f"classify: variant {args.variant}, {queries.n} queries -> {out_path}"
    if q_labels is not None:
        msg += f"; accuracy {float(np.mean(preds == q_labels)):.4f}"
    print(msg)
    return 0


def cmd_inspect(args) -> int:
    import numpy as np

    from .index import load_index

    cfg = _load_config(args)
    index = load_index(_path(args, cfg, "index"))
    cards = np.array([b.n_members for b in index.buckets])
    bins = np.array([len(b.bins) for b in index.buckets])
    degenerate = sum(b.degenerate for b in index.buckets)
    print(f"index: n={index.n} d={index.d} K={index.K} "
          f"(format v1, checksum {index.data_checksum:#010x})")
    qs = np.percentile(cards, [0, 25, 50, 75, 100]).astype(int) if cards.size else []
    print(f"bucket cardinality: min/q25/median/q75/max = {'/'.join(map(str, qs))}")
    hist, edges = np.histogram(cards, bins=min(10, max(1, cards.size)))
    for count, lo, hi in zip(hist, edges[:-1], edges[1:]):
        print(f"  [{lo:10.1f}, {hi:10.1f}): {'#' * max(1, int(40 * count / max(1, hist.max()))) if count else ''} {count}")
    print(f"bins per bucket: mean {bins.mean():.1f}, max {bins.max()}")
    print(f"degenerate buckets: {degenerate}")
    return 0


# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _prescan_threads(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - single-line CLI error contract
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
