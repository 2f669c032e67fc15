"""Command line entry point: ``idsframe <subcommand> --config run.yaml``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import pipeline, reaggregate, synthetic

log = logging.getLogger("idsframe")


def _load_cfg(args) -> dict:
    return cfgmod.load(args.config, seed=getattr(args, "seed", None), scale=getattr(args, "scale", None))


def cmd_ingest(args) -> int:
    cfg = _load_cfg(args)
    man = pipeline.open_run(cfg)
    pipeline.step_ingest(cfg, man)
    print(Path(man.run_dir, "ingest", "report.json").read_text(), end="")
    return 0


def cmd_samplesets(args) -> int:
    cfg = _load_cfg(args)
    man = pipeline.open_run(cfg)
    pipeline.step_ingest(cfg, man)
    bundle = pipeline.step_samplesets(cfg, man)
    for i, s in enumerate(bundle.sample_sets):
        sizes = [len(f) for f in s.folds]
        print(f"sampleset {i}: {s.normal_count} normal + {s.anomaly_count} anomalous "
              f"({100 * s.anomaly_fraction:.2f}%), folds {sizes}")
    print(f"bundle: {Path(man.run_dir, 'samplesets', 'bundle.json')}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    if args.k_sweep:
        mans, table = pipeline.sweep_k(cfg, args.k_sweep, workers=args.workers, fail_fast=args.fail_fast)
        print(table.read_text())
        print(f"table: {table}")
        return pipeline.EXIT_OK if all(m.complete for m in mans) else pipeline.EXIT_PARTIAL
    man = pipeline.run_pipeline(cfg, workers=args.workers, fail_fast=args.fail_fast)
    print(Path(man.run_dir, "report", "auc_table.txt").read_text())
    print(Path(man.run_dir, "report", "tpr_fpr_table.txt").read_text())
    print(f"run directory: {man.run_dir}")
    return pipeline.EXIT_OK if man.complete else pipeline.EXIT_PARTIAL


def cmd_stage3(args) -> int:
    cfg = _load_cfg(args)
    man = pipeline.run_stage3(cfg)
    out = Path(man.run_dir, "stage3")
    d = json.loads((out / "logloss.json").read_text())
    print(f"base log-loss {d['base_log_loss']:.4f}   CNN log-loss {d['cnn_log_loss']:.4f}   "
          f"accuracy {d['accuracy']:.4f}")
    print((out / "confusion.txt").read_text())
    return 0


def _run_dir(args) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    cfg = _load_cfg(args)
    return Path(cfg["output_dir"]) / cfgmod.config_hash(cfg)[:12]


def cmd_report(args) -> int:
    run_dir = _run_dir(args)
    code = pipeline.report(run_dir)
    for name in ("auc_table.txt", "tpr_fpr_table.txt", "logloss_table.txt"):
        p = run_dir / "report" / name
        if p.exists():
            print(p.read_text())
    if code == pipeline.EXIT_PARTIAL:
        print("PARTIAL REPORT: some fold/method results are missing", file=sys.stderr)
    return code


def cmd_reaggregate(args) -> int:
    run_dir = _run_dir(args)
    ok, diffs = reaggregate.compare(run_dir)
    print(json.dumps(reaggregate.reaggregate(run_dir), indent=2, sort_keys=True))
    for d in diffs:
        print("MISMATCH " + d, file=sys.stderr)
    return 0 if ok else 1


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "nsl_kdd":
        synthetic.write_nslkdd_like(out / "train.txt", args.normal, args.anomalous, seed=args.seed)
        synthetic.write_nslkdd_like(out / "test.txt", args.normal // 4, args.anomalous // 4, seed=args.seed + 1)
        print(f"wrote {out / 'train.txt'} and {out / 'test.txt'}")
    else:
        synthetic.write_toniot_like(out / "windows10.csv", args.normal, seed=args.seed)
        print(f"wrote {out / 'windows10.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idsframe", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, seed=True):
        sp.add_argument("--config", required=True, help="run config (YAML)")
        if seed:
            sp.add_argument("--seed", type=int, default=None)
            sp.add_argument("--scale", choices=("desk", "full"), default=None)
        return sp

    with_config(sub.add_parser("ingest", help="load, encode and report on the dataset")).set_defaults(fn=cmd_ingest)
    with_config(sub.add_parser("samplesets", help="build the SampleSet bundle")).set_defaults(fn=cmd_samplesets)
    sp = with_config(sub.add_parser("run", help="full anomaly-detection experiment"))
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--fail-fast", action="store_true")
    sp.add_argument("--k-sweep", type=int, nargs="+", metavar="K",
                    help="repeat the run for each cluster count and tabulate AUC (e.g. 4 8 16)")
    sp.set_defaults(fn=cmd_run)
    with_config(sub.add_parser("stage3", help="train and evaluate the attack classifier")).set_defaults(fn=cmd_stage3)
    for name, fn, text in (("report", cmd_report, "render report tables"),
                           ("reaggregate", cmd_reaggregate, "recompute aggregates from score CSVs")):
        sp = sub.add_parser(name, help=text)
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument("--run-dir")
        g.add_argument("--config")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--scale", choices=("desk", "full"), default=None)
        sp.set_defaults(fn=fn)
    sp = sub.add_parser("synth", help="write a synthetic dataset in NSL-KDD or TON_IoT layout")
    sp.add_argument("kind", choices=("nsl_kdd", "ton_iot_win10"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--normal", type=int, default=20000)
    sp.add_argument("--anomalous", type=int, default=2500)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (cfgmod.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
