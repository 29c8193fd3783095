"""``connectome-llm`` command line.

Subcommands: synth, distances, train, eval, ablate. Configuration comes from
defaults, then ``--config FILE``, then ``CLK_SEED`` (for seeds the file leaves
unset), then ``--seed``/``--manifest``/``--set key=value`` flags.

Every failure prints exactly one line on stderr::

    error: module=<module> type=<ErrorClass> cause=<message>

and the exit status is nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import SEED_ENV, RunConfig, load_run_config
from .errors import ConnectomeLLMError

log = logging.getLogger("connectome_llm")


class UsageError(Exception):
    module = "cli"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _non_negative(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive(text: str) -> int:
    value = _non_negative(text)
    if value == 0:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _assignment(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=_non_negative, help="seed for splits, training and synthesis")
    common.add_argument("--jobs", type=_positive, default=1, help="parallel subject/cell workers")
    common.add_argument("--dry-run", action="store_true", help="validate and print the resolved config, then stop")
    common.add_argument("--set", dest="overrides", action="append", type=_assignment, default=[],
                        metavar="KEY=VALUE", help="dotted config override, e.g. train.epochs=5")  # fmt: skip
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="connectome-llm", description="Connectome distance series through a frozen transformer.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic cohort")
    p.add_argument("--normal", type=_non_negative, default=20)
    p.add_argument("--mci", type=_non_negative, default=2)
    p.add_argument("--imp", type=_non_negative, default=2)
    p.add_argument("--rois", type=_positive, default=8)
    p.add_argument("--timepoints", type=_positive, default=120)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("distances", parents=[common], help="distance series per subject")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-windows", action="store_true", help="also write each window's connectivity matrix")

    p = sub.add_parser("train", parents=[common], help="train one model per split repeat")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True, help="checkpoint directory")

    p = sub.add_parser("eval", parents=[common], help="per-group MAE of trained checkpoints")
    p.add_argument("--checkpoints", required=True, help="directory written by 'train'")
    p.add_argument("--manifest", help="cohort to evaluate (default: the one used for training)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", parents=[common], help="run ablation grids")
    p.add_argument("--manifest")
    p.add_argument("--grid", type=_csv_list, default=["table2"], help="comma list of grid names")
    p.add_argument("--delta", type=_csv_list, help="ad-hoc cells instead of named grids, e.g. Default,AH4")
    p.add_argument("--backbones", type=_csv_list)
    p.add_argument("--metrics", type=_csv_list)
    p.add_argument("--out", required=True)
    return parser


def _resolve(args, env) -> RunConfig:
    overrides = dict(args.overrides)
    if args.seed is not None:
        overrides["train.seed"] = args.seed
        overrides["split.seed"] = args.seed
    if getattr(args, "manifest", None):
        overrides["manifest"] = str(Path(args.manifest).resolve())
    return load_run_config(args.config, overrides, env)


def _print_config(cfg: RunConfig) -> None:
    print(cfg.to_json())


def cmd_synth(args, env) -> int:
    from .timeseries_io import SyntheticSpec, generate_synthetic_cohort, save_cohort

    seed = args.seed
    if seed is None:
        # same precedence as the other commands: flag, then CLK_SEED, then 0
        seed = load_run_config(args.config, dict(args.overrides), env).train.seed
    spec = SyntheticSpec(args.normal, args.mci, args.imp, args.rois, args.timepoints, seed)
    if args.dry_run:
        print(json.dumps({k: getattr(spec, k) for k in spec.__dataclass_fields__}, indent=2))
        return 0
    manifest = save_cohort(generate_synthetic_cohort(spec), args.out)
    print(manifest)
    return 0


def cmd_distances(args, env) -> int:
    from .connectome import dump_connectomes, sliding_window_connectomes
    from .model import cohort_distances
    from .timeseries_io import load_cohort

    cfg = _resolve(args, env).validate(require_manifest=True)
    if args.dry_run:
        _print_config(cfg)
        return 0
    cohort = load_cohort(cfg.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series = cohort_distances(cohort, cfg, jobs=args.jobs)
    index = []
    for r in cohort.records:
        name = f"{r.subject_id}.json"
        series[r.subject_id].save(out / name)
        index.append({"id": r.subject_id, "file": name, "d": series[r.subject_id].d, "T": series[r.subject_id].T})
        if args.dump_windows:
            dump_connectomes(sliding_window_connectomes(r, cfg.window.length, cfg.window.stride), out / "windows" / r.subject_id)
    (out / "index.json").write_text(json.dumps({"metrics": cfg.metrics, "subjects": index}, indent=2) + "\n")
    log.info("wrote %d distance series to %s", len(index), out)
    return 0


def cmd_train(args, env) -> int:
    from .model import cohort_distances
    from .timeseries_io import load_cohort
    from .trainer import run_protocol

    cfg = _resolve(args, env).validate(require_manifest=True)
    if args.dry_run:
        _print_config(cfg)
        return 0
    cohort = load_cohort(cfg.manifest)
    series = cohort_distances(cohort, cfg, jobs=args.jobs)
    out = Path(args.out)
    result = run_protocol(cohort, cfg, series, checkpoint_dir=out)
    summary = {
        "manifest": str(cfg.manifest),
        "repeats": [
            {"repeat": r.split.repeat, "best_epoch": r.train.best_epoch, "history": r.train.history}
            for r in result.repeats
        ],
    }
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for r in result.repeats:
        h = r.train.history
        print(f"repeat {r.split.repeat}: train loss {h[0]['train_loss']:.4f} -> {h[-1]['train_loss']:.4f}, best epoch {r.train.best_epoch}")
    return 0


def cmd_eval(args, env) -> int:
    from .model import load_checkpoint, prepare_inputs
    from .timeseries_io import load_cohort
    from .trainer import aggregate, evaluate, mean_baseline, report_rows, table_layout, write_report

    ckpt = Path(args.checkpoints)
    dirs = sorted(ckpt.glob("repeat_*"), key=lambda p: int(p.name.split("_")[1]))
    if not dirs:
        raise FileNotFoundError(f"no repeat_* checkpoints under {ckpt}")
    if args.dry_run:
        _, cfg, _, _ = load_checkpoint(dirs[0])
        _print_config(cfg)
        return 0
    reports, baselines = [], []
    cohort = None
    for d in dirs:
        model, cfg, meta, _ = load_checkpoint(d)
        if cohort is None:
            cohort = load_cohort(args.manifest or cfg.manifest)
        inputs = prepare_inputs(cohort, cfg, T=meta["T"])
        test = inputs.subset(meta["split"]["test"])
        train = inputs.subset(meta["split"]["train"])
        reports.append(evaluate(model, test))
        baselines.append(mean_baseline(train, test))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = table_layout({"model": aggregate(reports), "train-mean baseline": aggregate(baselines)})
    write_report(
        report_rows("model", reports) + report_rows("baseline", baselines),
        out / "report.csv",
        out / "report.json",
        {"table": table, "predictions": [r.predictions for r in reports]},
    )
    (out / "table.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_ablate(args, env) -> int:
    from .ablation import ablation_grid, custom_grid, run_ablation, save_grid
    from .timeseries_io import load_cohort

    cfg = _resolve(args, env).validate(require_manifest=True)
    if args.delta:
        backbone = (args.backbones or ["gpt2"])[0]
        metric = (args.metrics or ["wass1"])[0]
        cells = custom_grid(args.delta, backbone, metric)
    else:
        cells = [c for g in args.grid for c in ablation_grid(g, args.backbones, args.metrics)]
    for c in cells:
        c.config(cfg).validate()
    out = Path(args.out)
    if args.dry_run:
        _print_config(cfg)
        print(f"{len(cells)} cells")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    save_grid(cells, out / "grid.json")
    result = run_ablation(cells, load_cohort(cfg.manifest), cfg, jobs=args.jobs)
    result.write(out / "ablation.csv", out / "ablation.json")
    (out / "table.txt").write_text(result.table() + "\n")
    print(result.table())
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "distances": cmd_distances,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def _error_line(module: str, kind: str, cause) -> str:
    text = " ".join(str(cause).split())
    return f"error: module={module} type={kind} cause={text}"


def main(argv=None, env=None) -> int:
    env = dict(os.environ) if env is None else env
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(_error_line("cli", "UsageError", exc), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, env)
    except ConnectomeLLMError as exc:
        print(_error_line(exc.module, type(exc).__name__, exc), file=sys.stderr)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(_error_line("io", type(exc).__name__, exc), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
