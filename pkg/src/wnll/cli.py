"""Command line entry point: ``wnll <command> [options]``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as dp
from .errors import ConfigError, WnllError
from .experiment import (
    RunConfig,
    WeightingConfig,
    load_config,
    prepare,
    run_compare,
    run_lambda_sweep,
    run_toy,
    synthetic_config,
    utility_key,
)
from .linear import load_model, predict_batch, save_model
from .metrics import CostModel, bootstrap, empirical_utility, log_loss, mse_weighted, utility
from .synthetic import generate_events
from .trainer import train
from .weighting import WeightingScheme, dampen, lambda_heuristic, rescale_lambda

log = logging.getLogger("wnll")

_POWERS = {"cpa": 1.0, "sqrt": 0.5, "quartic": 0.25}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _betas(text: str) -> tuple[float, ...]:
    try:
        out = tuple(float(b) for b in text.split(",") if b.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad beta list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty beta list")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config (default: built-in synthetic dataset)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--output", help="output directory")
    common.add_argument("--beta", type=_betas, help="comma-separated Gamma cost-model betas")
    common.add_argument("--weighting", choices=["none", *_POWERS], help="CPA dampening for the weighted model")
    common.add_argument("--cap", type=float, help="CPA cap before dampening")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="wnll", description="Value-weighted conversion models and offline bidding metrics.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write the synthetic click log as TSV")
    sub.add_parser("ingest", parents=[common], help="hash the log and assign campaign CPAs")
    tr = sub.add_parser("train", parents=[common], help="fit one model")
    tr.add_argument("--records", type=Path, help="record file from 'ingest' (default: all pre-test records)")
    ev = sub.add_parser("eval", parents=[common], help="score a model on a record file")
    ev.add_argument("--model", type=Path, required=True)
    ev.add_argument("--records", type=Path, help="record file (default: the test window)")
    sub.add_parser("compare", parents=[common], help="weighted vs unweighted training, per segment")
    sub.add_parser("toy", parents=[common], help="intercept-only loss curves for two advertisers")
    sub.add_parser("lambda-sweep", parents=[common], help="weighted model at several lambda multiples")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else synthetic_config()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, trainer=replace(cfg.trainer, seed=args.seed))
        if cfg.dataset.synthetic is not None:
            cfg.dataset = replace(cfg.dataset, synthetic=replace(cfg.dataset.synthetic, seed=args.seed))
    if args.output is not None:
        cfg = replace(cfg, output=args.output)
    if args.beta is not None:
        cfg = replace(cfg, betas=args.beta)
    wt: WeightingConfig = cfg.weighting
    if args.weighting is not None:
        wt = replace(wt, enabled=args.weighting != "none", power=_POWERS.get(args.weighting, wt.power))
    if args.cap is not None:
        wt = replace(wt, cap=args.cap)
    return replace(cfg, weighting=wt).validate()


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(path)


def cmd_generate(cfg: RunConfig, args) -> None:
    synth = cfg.dataset.synthetic
    if synth is None:
        raise ConfigError("generate needs a synthetic dataset config")
    path = _out(cfg) / "synthetic.tsv.gz"
    dp.write_events(path, generate_events(synth), cfg.dataset.schema())
    print(path)


def cmd_ingest(cfg: RunConfig, args) -> None:
    prep = prepare(cfg)
    out = _out(cfg)
    dp.write_records(out / "records.jsonl.gz", prep.records)
    print(out / "records.jsonl.gz")
    table = {k: vars(s) for k, s in sorted(prep.table.items())}
    _write_json(out / "campaigns.json", {"global_avg_cr": prep.table.global_avg_cr, "campaigns": table})


def _pre_test_records(cfg: RunConfig) -> dp.RecordSet:
    prep = prepare(cfg)
    return prep.records.take(np.flatnonzero(prep.records.timestamp < cfg.windows.test[0]))


def cmd_train(cfg: RunConfig, args) -> None:
    records = dp.read_records(args.records) if args.records else _pre_test_records(cfg)
    scheme: WeightingScheme = cfg.weighting.scheme()
    weights = np.asarray(dampen(records.value, scheme), dtype=np.float64).reshape(len(records))
    lam = lambda_heuristic(records)
    if scheme.enabled:
        lam = rescale_lambda(lam, weights)
    model = train(records, cfg.trainer, weights=weights, lam=lam)
    path = _out(cfg) / "model.json"
    save_model(path, model)
    print(path)


def cmd_eval(cfg: RunConfig, args) -> None:
    model = load_model(args.model)
    if args.records:
        records = dp.read_records(args.records)
    else:
        records = dp.RecordSet.concat([s.test for s in prepare(cfg).splits])
    p = predict_batch(model, records.X)
    boot = cfg.bootstrap
    groups = records.campaign if boot.unit == "campaign" else None

    def report(name, fn):
        r = bootstrap(lambda idx: fn(p[idx], records.take(idx)), np.arange(len(records)),
                      boot.replicates, boot.level, cfg.seed, groups=groups)
        return r.to_dict(name)

    metrics = [report("log_loss", log_loss), report("msew", mse_weighted), report("empirical_utility", empirical_utility)]
    for beta in cfg.betas:
        cm = CostModel.gamma(beta)
        metrics.append(report(utility_key(beta), lambda q, r, cm=cm: utility(q, r, cm)))
    _write_json(_out(cfg) / "eval.json", {"n": len(records), "metrics": metrics})


def cmd_compare(cfg: RunConfig, args) -> None:
    rep = run_compare(cfg)
    path = _out(cfg) / "compare.json"
    path.write_text(rep.to_json())
    print(path)


def cmd_toy(cfg: RunConfig, args) -> None:
    res = run_toy(cfg)
    out = _out(cfg)
    (out / "toy.csv").write_text(res.to_csv())
    (out / "toy_summary.json").write_text(res.summary_json())
    print(out / "toy.csv")
    print(out / "toy_summary.json")


def cmd_lambda_sweep(cfg: RunConfig, args) -> None:
    rows = run_lambda_sweep(cfg)
    _write_json(_out(cfg) / "lambda_sweep.json", rows)


COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "toy": cmd_toy,
    "lambda-sweep": cmd_lambda_sweep,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except WnllError as exc:
        print(f"wnll: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        # unreadable inputs and malformed files surface as data errors
        print(f"wnll: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
