"""Command-line interface: ``verfedsv {train,value,experiment,rank-report}``.

Configuration comes from an optional YAML file (``--config``); flags win
over file values. All outputs are written atomically into ``--output``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import experiments as ex
from .completion import CompletionError
from .config import ConfigError, config_from_dict
from .data import DimensionError, ParseError
from .files import atomic_write_text, write_csv
from .model import lipschitz_G
from .sync import DivergenceError
from .trace import TraceSchemaError, read_trace, write_trace
from .vafl import write_event_log

log = logging.getLogger("verfedsv")

USER_ERRORS = (ConfigError, ParseError, DimensionError, TraceSchemaError, DivergenceError,
               CompletionError, OSError, ValueError)


def _read_raw(path) -> tuple[dict, Path | None]:
    if path is None:
        return {}, None
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw, path.parent


def _apply_flags(raw: dict, args) -> dict:
    raw = dict(raw)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "output", None) is not None:
        raw["output"] = args.output
    if getattr(args, "mode", None) is not None:
        raw["mode"] = args.mode
    if getattr(args, "subsample", None) is not None:
        raw["dataset"] = {**(raw.get("dataset") or {}), "subsample": args.subsample}
    if getattr(args, "exact", False) and getattr(args, "K", None) is not None:
        raise ConfigError("--exact and --K are mutually exclusive")
    if getattr(args, "exact", False):
        raw["valuation"] = {**(raw.get("valuation") or {}), "method": "exact"}
    if getattr(args, "K", None) is not None:
        if args.K < 1:
            raise ConfigError("--K must be >= 1")
        raw["valuation"] = {**(raw.get("valuation") or {}), "method": "mc", "K": args.K}
    return raw


def _write_summary(path: Path, lines) -> None:
    atomic_write_text(path, "\n".join(lines) + "\n")
    print("\n".join(lines))


def _write_valuation(out: Path, val: ex.Valuation, kinds) -> None:
    write_csv(out / "valuation.csv", ex.VALUATION_HEADER, ex.valuation_rows(val, kinds))


def cmd_train(args) -> int:
    raw, base = _read_raw(args.config)
    cfg = config_from_dict(_apply_flags(raw, args), base)
    out = Path(cfg.output)
    data = ex.prepare_data(cfg)
    result = ex.train(cfg, data)
    write_trace(result.trace, out / "trace", data.train.labels, ex.trace_meta(cfg, data))
    write_csv(out / "history.csv", ["step", "loss"], enumerate(result.history.tolist()))
    if cfg.mode == "async":
        write_event_log(out / "events.csv", result.events)
    _write_summary(out / "train_summary.txt", ex.summary_lines(cfg.mode, result.trace, None, result))
    return 0


def cmd_value(args) -> int:
    raw, base = _read_raw(args.config)
    cfg = config_from_dict(_apply_flags(raw, args), base)
    out = Path(cfg.output)
    trace_dir = Path(args.trace) if args.trace else out / "trace"
    trace, labels, meta = read_trace(trace_dir)
    loss = ex.loss_from_meta(meta)
    val = ex.value_trace(trace, labels, loss, cfg, meta.get("dims"))
    kinds = meta.get("kinds") or ["regular"] * trace.n_clients
    if len(kinds) != trace.n_clients:
        raise TraceSchemaError(f"{trace_dir}/meta.json: {len(kinds)} kinds for {trace.n_clients} clients")
    _write_valuation(out, val, kinds)
    _write_summary(out / "value_summary.txt", ex.summary_lines(meta.get("mode", trace.kind), trace, val))
    return 0


def cmd_experiment(args) -> int:
    raw, base = _read_raw(args.config)
    raw = _apply_flags(raw, args)
    raw.setdefault("output", f"runs/{args.preset}")
    cfg = ex.preset_config(args.preset, raw, base)
    out = Path(cfg.output)
    res = ex.run_experiment(args.preset, cfg)
    write_csv(out / f"{args.preset}.csv", res.header, res.rows)
    if res.valuation is not None:
        _write_valuation(out, res.valuation, res.data.kinds)
    _write_summary(out / "summary.txt", [f"preset: {args.preset}", *res.summary])
    return 0


def cmd_rank_report(args) -> int:
    raw, base = _read_raw(args.config)
    raw = _apply_flags(raw, args)
    if args.trace is None:
        raw.setdefault("output", "runs/rank_report")
        cfg = ex.preset_config("rank_report", raw, base)
        res = ex.run_experiment("rank_report", cfg)
        rows, summary = res.rows, res.summary
    else:
        cfg = config_from_dict(raw, base)
        trace, labels, meta = read_trace(args.trace)
        dims = meta.get("dims") or [cfg.completion.rank_cap] * trace.n_clients
        snaps, _ = ex.snapshots_for(trace, cfg, dims)
        history = snaps if isinstance(snaps, np.ndarray) else np.stack(list(snaps))
        lr = cfg.sync.learning_rate if trace.kind == "observed" else cfg.async_.learning_rate
        G = lipschitz_G(ex.loss_from_meta(meta))
        rows = ex.rank_rows(trace, dims, cfg.rank_eps, lr, G, matrices=history)
        summary = ex.summary_lines(meta.get("mode", trace.kind), trace, None) + [f"rank eps: {cfg.rank_eps!r}"]
    out = Path(cfg.output)
    write_csv(out / "rank_report.csv", ex.RANK_HEADER, rows)
    _write_summary(out / "rank_summary.txt", summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="verfedsv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, valuation: bool):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="top-level seed")
        p.add_argument("--output", help="output directory")
        p.add_argument("--mode", choices=["sync", "async"])
        p.add_argument("--subsample", type=int, help="keep this many training rows")
        if valuation:
            p.add_argument("--K", type=int, help="Monte-Carlo valuation with K permutations")
            p.add_argument("--exact", action="store_true", help="exact valuation over all coalitions")

    p = sub.add_parser("train", help="train and write the embedding trace")
    common(p, valuation=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("value", help="value clients from a trace directory")
    p.add_argument("trace", nargs="?", help="trace directory (default: <output>/trace)")
    common(p, valuation=True)
    p.set_defaults(func=cmd_value)

    p = sub.add_parser("experiment", help="run a preset end to end")
    p.add_argument("preset", choices=sorted(ex.PRESETS))
    common(p, valuation=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("rank-report", help="approximated eps-rank of embedding matrices")
    p.add_argument("--trace", help="report on an existing trace instead of training")
    common(p, valuation=False)
    p.set_defaults(func=cmd_rank_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
