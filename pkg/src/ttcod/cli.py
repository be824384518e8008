"""Command-line harness: ``ttcod <command> [options]``.

Relative paths resolve against ``$TTCOD_OUTPUT_ROOT`` (default: working
directory). On failure a single line ``error kind=<ExceptionClass> msg=<json>``
goes to stderr and the exit status is nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, resolve_output
from .data import gen_data, synthetic_split
from .experiment import (ablate, evaluate_dirs, evaluate_run, load_run, run_experiment,
                         write_per_image)
from .metrics import aggregate
from .probe import (channel_ablation, effect_distance, gain_table, read_deltas, write_deltas,
                    write_gain_table)
from .report import report

EXIT_ERROR = 1
EXIT_USAGE = 2


def error_line(kind: str, msg: str) -> str:
    return f"error kind={kind} msg={json.dumps(msg)}"


class _Parser(argparse.ArgumentParser):
    # usage errors stay one line, like runtime errors
    def error(self, message):
        print(error_line("UsageError", f"{self.prog}: {message}"), file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; explicit flags override it")
    for f in dataclasses.fields(ExperimentConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="V",
                       help=f"(default {f.default!r})")


def _config(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(ExperimentConfig)
                 if getattr(args, f.name, None) is not None}
    return ExperimentConfig.from_mapping(overrides, base)


def _print_rows(rows) -> None:
    for variant, dataset, r in rows:
        values = " ".join(f"{k}={v:.4f}" for k, v in r.as_dict().items())
        print(f"{variant} {dataset} {values} P={r.P:.4f} N={r.N:.4f}")


def cmd_gen_data(args) -> None:
    cfg = _config(args)
    out = gen_data(cfg.data_spec(), resolve_output(args.out))
    print(f"wrote dataset to {out} config_hash={cfg.hash}")


def cmd_train(args) -> None:
    cfg = _config(args)
    out = resolve_output(args.out)
    rows = run_experiment(cfg, resolve_output(args.data), out)
    print(f"checkpoint {out / 'model.sttc'} config_hash={cfg.hash}")
    _print_rows(rows)


def cmd_eval(args) -> None:
    out = resolve_output(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.pred is not None:
        if args.gt is None:
            raise ValueError("--pred requires --gt")
        reports = evaluate_dirs(resolve_output(args.pred), resolve_output(args.gt))
        write_per_image(out / "per_image.csv", reports, "")
        _print_rows([("external", Path(args.pred).name, aggregate(reports))])
        return
    if args.run is None or args.data is None:
        raise ValueError("eval needs either --run and --data, or --pred and --gt")
    cfg, model = load_run(resolve_output(args.run))
    _print_rows(evaluate_run(cfg, model, resolve_output(args.data), out))


def cmd_ablate(args) -> None:
    cfg = _config(args)
    path = ablate(cfg, resolve_output(args.data), resolve_output(args.out))
    print(f"wrote {path}")


def _channels(spec: str | None):
    return None if spec is None else [int(c) for c in spec.split(",") if c.strip()]


def _run_deltas(run_dir, channels):
    cfg, model = load_run(run_dir)
    probe = synthetic_split(cfg.probe_seed, cfg.probe_size, cfg.image_size, cfg.contrast)
    return cfg, channel_ablation(model, probe, channels)


def cmd_probe(args) -> None:
    out = resolve_output(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.base_csv is not None:
        base, tag = read_deltas(resolve_output(args.base_csv)), ""
        variant = read_deltas(resolve_output(args.variant_csv)) if args.variant_csv else None
    else:
        if args.base_run is None:
            raise ValueError("probe needs --base-run or --base-csv")
        channels = _channels(args.channels)
        cfg, base = _run_deltas(resolve_output(args.base_run), channels)
        tag = cfg.hash
        write_deltas(out / "deltas_base.csv", base, tag)
        variant = None
        if args.variant_run is not None:
            vcfg, variant = _run_deltas(resolve_output(args.variant_run), channels)
            tag = f"{cfg.hash}+{vcfg.hash}"
            write_deltas(out / "deltas_variant.csv", variant, vcfg.hash)
    if variant is None:
        variant = base
    table = gain_table(base, variant)
    write_gain_table(out / "gain_table.csv", table, tag)
    print(f"wrote {out / 'gain_table.csv'} effect_distance={effect_distance(base, variant)!r}")


def cmd_report(args) -> None:
    out = resolve_output(args.out)
    summaries = report([resolve_output(p) for p in args.csv], out)
    for s in summaries:
        p = "-" if s.P is None else f"{s.P:.4f}"
        n = "-" if s.N is None else f"{s.N:.4f}"
        print(f"{s.variant} rows={s.n_rows} P={p} N={n}")
    print(f"wrote {out / 'report.csv'} {out / 'report_pn.svg'} {out / 'report_metrics.svg'}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ttcod", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a seeded synthetic camouflage dataset")
    p.add_argument("--out", default="data")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one variant, checkpoint it, evaluate held-out splits")
    p.add_argument("--data", default="data")
    p.add_argument("--out", default="run")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, or prediction masks against ground truth")
    p.add_argument("--run")
    p.add_argument("--data")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--out", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="R-SAMPC depth/scaling sweep (L0..L5, L4+eps)")
    p.add_argument("--data", default="data")
    p.add_argument("--out", default="ablation")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("probe", help="channel-ablation deltas and gain table")
    p.add_argument("--base-run")
    p.add_argument("--variant-run")
    p.add_argument("--base-csv", help="external channel,delta table")
    p.add_argument("--variant-csv")
    p.add_argument("--channels", help="comma-separated channel indices (default: all)")
    p.add_argument("--out", default="probe")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="P/N summary and SVG plots from metric CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parseable line
        msg = exc.args[0] if len(exc.args) == 1 and isinstance(exc.args[0], str) else str(exc)
        print(error_line(type(exc).__name__, msg), file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
