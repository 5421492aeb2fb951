"""Command-line entry point (``sdalr``).

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DataError, SDALRError, TrainingError
from .experiments import (
    ExperimentSpec,
    apply_overrides,
    export_embeddings,
    inspect_pseudo_labels,
    load_domain,
    parse_assignments,
    report,
    run_ablation,
    run_matrix,
    run_sweep,
    write_confusion,
)
from .network import load_checkpoint
from .pseudo_label import assign_labels
from .signals import TransferTask
from .training import adapt_target, evaluate, train_source

log = logging.getLogger("sdalr")


def _spec(args) -> ExperimentSpec:
    overrides = parse_assignments(args.set)
    for key in ("output_dir", "seeds", "parallel_tasks"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "overwrite", False):
        overrides["overwrite"] = True
    if getattr(args, "axis", None):
        overrides["sweep"] = args.axis
    if args.config:
        return ExperimentSpec.load(args.config, overrides)
    return ExperimentSpec.from_dict(apply_overrides({}, overrides))


def _print_table(table):
    sys.stdout.write(table.to_text())


# --- subcommands -------------------------------------------------------------------


def cmd_train_source(args):
    spec = _spec(args)
    data = load_domain(spec, args.domain, args.seed)
    cfg = spec.adaptation_config(seed=args.seed)
    model = train_source(data, cfg, encoder=spec.encoder_config(), run_dir=args.out)
    val = model.meta["history"]["val_acc"]
    msg = f"source {args.domain}: trained on {len(data)} windows"
    if val:
        msg += f", validation accuracy {val[-1] * 100:.2f}%"
    print(msg)
    print(f"checkpoint: {Path(args.out) / 'source.pt'}")


def cmd_adapt(args):
    spec = _spec(args)
    task = TransferTask.parse(args.task)
    cfg = spec.adaptation_config(seed=args.seed)
    if args.source:
        source = load_checkpoint(args.source, encoder=spec.encoder_config())
    else:
        source = train_source(load_domain(spec, task.source_domain, args.seed), cfg,
                              encoder=spec.encoder_config(), run_dir=args.out)
    target = load_domain(spec, task.target_domain, args.seed)
    _, record = adapt_target(source, target, cfg, run_dir=args.out)
    write_confusion(Path(args.out) / "confusion.csv", np.asarray(record.final["confusion"]))
    print(f"{task}: source-only {record.source_accuracy * 100:.2f}% -> adapted "
          f"{record.final_accuracy * 100:.2f}% ({record.wall_time:.0f}s)")


def cmd_evaluate(args):
    spec = _spec(args)
    model = load_checkpoint(args.checkpoint)
    result = evaluate(model, load_domain(spec, args.domain, args.seed))
    print(f"accuracy {result.accuracy * 100:.2f}%")
    print("per class " + " ".join(f"{v * 100:.1f}" for v in result.per_class))
    if args.confusion:
        write_confusion(args.confusion, result.confusion)


def _run_driver(fn):
    def cmd(args):
        _print_table(fn(_spec(args)))

    return cmd


def cmd_report(args):
    _print_table(report(args.output_dir))


def cmd_inspect(args):
    spec = _spec(args)
    model = load_checkpoint(args.checkpoint)
    data = load_domain(spec, args.domain, args.seed)
    path = inspect_pseudo_labels(model, data, spec.adaptation_config(seed=args.seed), args.out)
    print(f"wrote {path}")


def cmd_export(args):
    spec = _spec(args)
    model = load_checkpoint(args.checkpoint)
    data = load_domain(spec, args.domain, args.seed)
    cfg = spec.adaptation_config(seed=args.seed)
    pseudo = assign_labels(model, data.without_labels(), cfg.threshold, cfg.seed,
                           use_voting=cfg.use_voting, params=cfg.augment_params()).labels
    path = export_embeddings(model, data, args.out, pseudo_labels=pseudo, plot=args.plot)
    print(f"wrote {path}")


def cmd_config(args):
    sys.stdout.write(yaml.safe_dump(_spec(args).resolved(), sort_keys=False, allow_unicode=True))


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdalr", description="Source-free adaptation of vibration-signal fault classifiers.")
    ap.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, *, seed=True):
        p.add_argument("-c", "--config", help="experiment YAML file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value, e.g. adaptation.beta=0.3 (repeatable)")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        return p

    def driver(p):
        common(p, seed=False)
        p.add_argument("-o", "--output-dir")
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--parallel-tasks", type=int)
        p.add_argument("--overwrite", action="store_true", help="reuse an existing output directory")
        return p

    p = common(sub.add_parser("train-source", help="train a source model on one domain"))
    p.add_argument("--domain", required=True)
    p.add_argument("-o", "--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train_source)

    p = common(sub.add_parser("adapt", help="adapt to one target domain"))
    p.add_argument("--task", required=True, help="e.g. A1->A2")
    p.add_argument("--source", help="source checkpoint; trained on the fly when omitted")
    p.add_argument("-o", "--out", required=True, help="run directory")
    p.set_defaults(func=cmd_adapt)

    p = common(sub.add_parser("evaluate", help="score a checkpoint on a labeled domain"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--confusion", help="write the confusion matrix (counts) to this CSV")
    p.set_defaults(func=cmd_evaluate)

    driver(sub.add_parser("matrix", help="adapt every task of the spec")).set_defaults(func=_run_driver(run_matrix))
    driver(sub.add_parser("ablation", help="run the four-rung module ladder")).set_defaults(func=_run_driver(run_ablation))
    p = driver(sub.add_parser("sweep", help="sweep beta or the similarity threshold"))
    p.add_argument("--axis", choices=["beta", "threshold"])
    p.set_defaults(func=_run_driver(run_sweep))

    p = sub.add_parser("pseudo-labels", help="pseudo-label tools")
    psub = p.add_subparsers(dest="pl_command", required=True)
    p = common(psub.add_parser("inspect", help="write ballots, similarities and voted labels as CSV"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_inspect)

    p = common(sub.add_parser("export-embeddings", help="write encoder features as CSV"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--plot", help="also write a 2-D projection scatter plot (PNG)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="rebuild tables from a finished or partial run directory")
    p.add_argument("output_dir")
    p.set_defaults(func=cmd_report)

    p = common(sub.add_parser("config", help="print the fully resolved config"), seed=False)
    p.set_defaults(func=cmd_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return ConfigError.exit_code
    except DataError as exc:
        log.error("data error: %s", exc)
        return DataError.exit_code
    except (TrainingError, SDALRError) as exc:
        log.error("training failed: %s", exc)
        return TrainingError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
