"""Command-line interface: the only human entry point of the package.

Subcommands cover the full pipeline: ``ingest`` and ``synth`` produce dataset
directories, ``graph`` dumps one day's adjacency, ``train`` fits a model,
``evaluate`` scores a checkpoint, ``ablate`` runs component-removal variants,
and ``dump-diffusion`` exports learned diffusion matrices.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error. The
merged run configuration is written next to every output, so each artifact
is reproducible from the files beside it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, evaluation, graph, kernels, model as model_mod, training
from .config import RunConfig, load_config
from .errors import DiffstockError, RangeError, ValidationError

log = logging.getLogger("diffstock")


# ---------------------------------------------------------------------------
# shared flag plumbing
# ---------------------------------------------------------------------------

# (flag, config section, field, type, help)
_CONFIG_FLAGS = [
    ("--tau", "data", "tau", int, "lookback window length in trading days"),
    ("--edge-features", "data", "edge_features", str,
     "feature variant fed to edge generation: raw or normalized"),
    ("--drop-threshold", "data", "drop_threshold", float,
     "drop tickers missing more than this fraction of the calendar"),
    ("--feature-format", "data", "feature_format", str,
     "per-day feature dump format: binary or csv"),
    ("--train-range", "data", "train_range", "range", "train period as START:END"),
    ("--val-range", "data", "validation_range", "range",
     "validation period as START:END"),
    ("--test-range", "data", "test_range", "range", "test period as START:END"),
    ("--bins", "graph", "bins", int, "histogram bins for entropy estimation"),
    ("--self-loops", "graph", "self_loops", "true_flag",
     "set the adjacency diagonal to 1 instead of 0"),
    ("--embed-dim", "model", "embed_dim", int, "node embedding width"),
    ("--heads", "model", "heads", int, "attention head count"),
    ("--layers", "model", "layers", int, "number of stacked layers"),
    ("--diffusion-steps", "model", "diffusion_steps", int,
     "transition matrices per layer (max diffusion step K)"),
    ("--activation-slope", "model", "activation_slope", float,
     "negative-side slope of the leaky rectifier"),
    ("--alpha", "train", "alpha", float, "neighborhood-radius reward weight"),
    ("--lr", "train", "lr", float, "learning rate"),
    ("--weight-decay", "train", "weight_decay", float, "decoupled weight decay"),
    ("--epochs", "train", "epochs", int, "training epochs"),
    ("--batch-size", "train", "batch_size", int,
     "days per optimizer step (0 = full batch)"),
    ("--patience", "train", "patience", int,
     "early-stop patience in epochs without validation-MCC improvement"),
    ("--penalty-mode", "train", "penalty_mode", str,
     "theta constraint: softmax-exact or squared-penalty"),
    ("--eval-every", "train", "eval_every", int,
     "validation evaluation cadence in epochs"),
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE|PRESET",
                        help="TOML/JSON config file or preset name "
                             "(nasdaq, nyse, sse)")
    parser.add_argument("--seed", type=int, help="master random seed")
    for flag, _, _, kind, help_text in _CONFIG_FLAGS:
        if kind == "true_flag":
            parser.add_argument(flag, action="store_const", const=True,
                                default=None, help=help_text)
        elif kind == "range":
            parser.add_argument(flag, metavar="START:END", help=help_text)
        else:
            parser.add_argument(flag, type=kind, help=help_text)


def _apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for flag, section, name, kind, _ in _CONFIG_FLAGS:
        value = getattr(args, flag.lstrip("-").replace("-", "_"), None)
        if value is None:
            continue
        if kind == "range":
            parts = value.split(":")
            if len(parts) != 2:
                raise ValidationError(f"{flag} expects START:END, got {value!r}")
            value = parts
        setattr(getattr(cfg, section), name, value)
    return cfg


def _merge_config(args: argparse.Namespace, base: RunConfig | None = None) -> RunConfig:
    """defaults (or ``base``) < config file < individual flags."""
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = base if base is not None else RunConfig()
    return _apply_flags(cfg, args)


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"{what} not found: {path}")
    return p


def _load_static(path: str | None, tickers: list[str]) -> np.ndarray | None:
    if path is None:
        return None
    if not Path(path).exists():
        raise ValidationError(f"static graph file not found: {path}")
    return graph.load_adjacency_csv(path, expected_tickers=tickers)


def _day_index(history: data.AlignedHistory, date: str) -> int:
    try:
        return history.dates.index(date)
    except ValueError:
        raise RangeError(
            f"day {date} outside calendar "
            f"({history.dates[0]}..{history.dates[-1]})"
        ) from None


def _prepared_split(history, cfg: RunConfig, name: str, static):
    return training.prepare_split(
        history, cfg.data.split_spec(), name, cfg.data.tau,
        cfg.graph.entropy_config(), cfg.data.edge_features, static,
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    in_dir = _require_dir(args.input, "input")
    paths = sorted(in_dir.glob("*.csv"))
    if not paths:
        raise ValidationError(f"no CSV files in {in_dir}")
    history = data.ingest(paths, cfg.data.indicators, cfg.data.drop_threshold)
    out = Path(args.out)
    data.save_dataset(history, out, cfg.data.feature_format)
    cfg.write(out / "run_config.json")
    print(f"ingested {history.n_nodes} tickers x {history.n_days} days -> {out}")
    if history.drop_report.get("dropped"):
        print(f"dropped: {sorted(history.drop_report['dropped'])}")
    return 0


def _parse_edges(args, n: int) -> list[data.PlantedEdge]:
    if args.edges:
        edges = []
        for item in args.edges.split(","):
            parts = item.split(":")
            if len(parts) != 4:
                raise ValidationError(
                    f"--edges items are LEADER:FOLLOWER:LAG:COUPLING, got {item!r}"
                )
            edges.append(data.PlantedEdge(int(parts[0]), int(parts[1]),
                                          int(parts[2]), float(parts[3])))
        return edges
    if 2 * args.n_edges > n:
        raise ValidationError(
            f"{args.n_edges} default edges need {2 * args.n_edges} distinct "
            f"tickers but --n is {n}"
        )
    return [data.PlantedEdge(2 * i, 2 * i + 1, args.lag, args.coupling)
            for i in range(args.n_edges)]


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    edges = _parse_edges(args, args.n)
    spec = data.SyntheticMarketSpec(
        n_nodes=args.n, days=args.days, edges=edges, noise_std=args.noise,
        seed=cfg.seed,
    )
    history = data.synth_market(spec)
    out = Path(args.out)
    planted = [{"leader": e.leader, "follower": e.follower, "lag": e.lag,
                "coupling": e.coupling} for e in edges]
    effective = sum(1 for e in edges if e.coupling > 0.0)
    data.save_dataset(history, out, cfg.data.feature_format, extra={
        "synthetic": {"spec_seed": spec.seed, "noise_std": spec.noise_std,
                      "planted_edges": planted, "effective_edges": effective},
    })
    data.write_history_csvs(history, out / "csv")
    cfg.write(out / "run_config.json")
    print(f"synthetic market: {args.n} tickers x {args.days} days -> {out}")
    print(f"planted edges above zero coupling: {effective}")
    return 0


def cmd_graph(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    history = data.load_dataset(_require_dir(args.data, "dataset"))
    t = _day_index(history, args.day)
    window = data.make_window(history, t, cfg.data.tau)
    source = window.raw if cfg.data.edge_features == "raw" else window.features
    adj = graph.build_adjacency(source, cfg.graph.entropy_config())
    if args.normalized:
        adj = graph.minmax_normalize(adj)
    graph.write_adjacency_csv(adj, history.tickers, args.out)
    print(f"adjacency for {args.day} ({history.n_nodes} nodes) -> {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    history = data.load_dataset(_require_dir(args.data, "dataset"))
    static = _load_static(args.static_graph, history.tickers)
    log.info("edge features for graph construction: %s", cfg.data.edge_features)
    log.info("kernel backend: %s", kernels.backend_name())
    train_days = _prepared_split(history, cfg, "train", static)
    val_days = _prepared_split(history, cfg, "validation", static)
    test_days = _prepared_split(history, cfg, "test", static)
    if not train_days:
        raise ValidationError("no usable training days in the configured range")

    train_cfg = cfg.train.train_config(cfg.seed)
    net = model_mod.Model(history.n_nodes, train_days[0].features.shape[1],
                          cfg.model.model_config(theta_mode=train_cfg.theta_mode),
                          seed=cfg.seed)
    print(f"parameters: {net.param_count()}")
    state = training.train(net, train_days, val_days, train_cfg, test_days=test_days)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_mod.save_checkpoint(
        out / "checkpoint.bin", net, history.universe_fingerprint(),
        run_config=cfg.to_dict(),
        extra={"best_epoch": state.best_epoch,
               "best_val_mcc": None if state.best_val_mcc == -np.inf
               else state.best_val_mcc,
               "static_graph": bool(static is not None)},
    )
    (out / "metrics.csv").write_text(training.history_csv(state))
    cfg.write(out / "run_config.json")
    status = "aborted (non-finite loss)" if state.aborted else "done"
    print(f"training {status}: {state.epochs_run} epochs, "
          f"best val MCC {state.best_val_mcc:.4f} at epoch {state.best_epoch}")
    print(f"checkpoint -> {out / 'checkpoint.bin'}")
    return 1 if state.aborted else 0


def _config_from_header(header: dict) -> RunConfig:
    """Rebuild the RunConfig stored in a checkpoint header."""
    cfg = RunConfig()
    stored = header.get("run_config") or {}
    for section in ("data", "graph", "model", "train"):
        for key, value in stored.get(section, {}).items():
            setattr(getattr(cfg, section), key, value)
    cfg.seed = stored.get("seed", 0)
    return cfg


def cmd_evaluate(args: argparse.Namespace) -> int:
    history = data.load_dataset(_require_dir(args.data, "dataset"))
    net, header = model_mod.load_checkpoint(args.checkpoint)
    model_mod.require_matching_universe(header, history.universe_fingerprint())
    # the checkpoint's stored config drives preprocessing unless overridden
    cfg = _merge_config(args, base=_config_from_header(header))
    static = _load_static(args.static_graph, history.tickers)
    days = _prepared_split(history, cfg, args.split, static)
    report = evaluation.evaluate_days(net, days, args.split, cfg.fingerprint())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"report_{args.split}.json").write_text(report.to_json())
    (out / f"report_{args.split}.txt").write_text(report.to_table())
    cfg.write(out / "run_config.json")
    print(report.to_table(), end="")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _merge_config(args)
    history = data.load_dataset(_require_dir(args.data, "dataset"))
    static = _load_static(args.static_graph, history.tickers)
    train_cfg = cfg.train.train_config(cfg.seed)
    report, state = training.run_ablation(
        history, cfg.data.split_spec(), cfg.data.tau, cfg.graph.entropy_config(),
        cfg.model.model_config(), train_cfg, args.mode,
        edge_features=cfg.data.edge_features, static_adjacency=static,
    )
    report.config_fingerprint = cfg.fingerprint()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ablation_{args.mode}.json").write_text(report.to_json())
    (out / f"ablation_{args.mode}.txt").write_text(report.to_table())
    cfg.write(out / "run_config.json")
    print(f"ablation mode: {args.mode}")
    print(report.to_table(), end="")
    return 0


def cmd_dump_diffusion(args: argparse.Namespace) -> int:
    history = data.load_dataset(_require_dir(args.data, "dataset"))
    net, header = model_mod.load_checkpoint(args.checkpoint)
    model_mod.require_matching_universe(header, history.universe_fingerprint())
    stored = header.get("run_config") or {}
    data_cfg = stored.get("data", {})
    graph_cfg = stored.get("graph", {})
    tau = data_cfg.get("tau", 19)
    edge_features = data_cfg.get("edge_features", "raw")
    t = _day_index(history, args.day)
    window = data.make_window(history, t, tau)
    source = window.raw if edge_features == "raw" else window.features
    adj = graph.build_adjacency(
        source, graph.EntropyConfig(bins=graph_cfg.get("bins", 64),
                                    self_loops=graph_cfg.get("self_loops", False)))
    written = model_mod.dump_diffusion(net, args.layer, adj, history.tickers,
                                       args.out, args.day)
    for path in written:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffstock",
        description="Dynamic stock graphs, learnable graph diffusion, and a "
                    "decoupled two-stream movement classifier.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="align per-ticker CSVs into a dataset directory")
    p.add_argument("--input", required=True, help="directory of per-ticker CSV files")
    p.add_argument("--out", required=True, help="output dataset directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic market dataset")
    p.add_argument("--n", type=int, required=True, help="number of tickers (>= 2)")
    p.add_argument("--days", type=int, required=True, help="number of trading days")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--edges", help="planted edges as LEADER:FOLLOWER:LAG:COUPLING,"
                                   " comma-separated (overrides --n-edges)")
    p.add_argument("--n-edges", type=int, default=2,
                   help="number of default planted edges")
    p.add_argument("--coupling", type=float, default=0.9,
                   help="coupling strength of default planted edges")
    p.add_argument("--lag", type=int, default=1, help="lag of default planted edges")
    p.add_argument("--noise", type=float, default=0.2,
                   help="follower noise std relative to leader return scale")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("graph", help="dump one day's adjacency matrix as CSV")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--day", required=True, help="trading day YYYY-MM-DD")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--normalized", action="store_true",
                   help="min-max normalize entries into [0, 1]")
    _add_config_flags(p)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for checkpoint and logs")
    p.add_argument("--static-graph", help="CSV adjacency replacing entropy edges")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"),
                   help="which split to score")
    p.add_argument("--out", required=True, help="output directory for reports")
    p.add_argument("--static-graph", help="CSV adjacency replacing entropy edges")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score one component-removal variant")
    p.add_argument("--mode", required=True, choices=training.ABLATION_MODES,
                   help="which component to remove")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for reports")
    p.add_argument("--static-graph",
                   help="CSV adjacency (required for no-entropy-graph)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-diffusion", help="export a layer's diffusion matrices")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--day", required=True, help="trading day YYYY-MM-DD")
    p.add_argument("--layer", type=int, required=True, help="layer index (0-based)")
    p.add_argument("--out", required=True, help="output directory for CSV dumps")
    p.set_defaults(func=cmd_dump_diffusion)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValidationError, RangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DiffstockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
