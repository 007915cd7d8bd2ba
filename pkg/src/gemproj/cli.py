"""Command-line front end.

Subcommands:
  run       train a (seed x method) grid and write result documents
  verify    run a named property suite (exit 1 on any failure)
  bench     time the projectors over a (m, d_phi, K) grid
  gen-data  sample a synthetic drift stream and dump it as CSV

Flags mirror the TrainConfig and StreamSpec field names.  Worker count
for the run grid comes from the GEMPROJ_WORKERS environment variable.
Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import bench as bench_mod
from . import verify as verify_mod
from .datagen import StreamSpec, dump_csv, generate_stream, ingest_csv
from .results import (
    build_aggregate,
    build_run_result,
    write_curves_csv,
    write_json,
)
from .trainer import TrainConfig, prepare_model, run_experiences

USAGE_ERROR = 2
VERIFY_FAILURE = 1


class CliError(Exception):
    """Usage-level error (bad config, missing file); exits with code 2."""


def _add_dataclass_args(parser, cls, skip=()):
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            parser.add_argument(flag, dest=f.name, default=None,
                                action=argparse.BooleanOptionalAction)
        elif f.type in ("int", int):
            parser.add_argument(flag, dest=f.name, type=int, default=None)
        elif f.type in ("float", float):
            parser.add_argument(flag, dest=f.name, type=float, default=None)
        elif f.type in ("str", str):
            parser.add_argument(flag, dest=f.name, type=str, default=None)
        # tuple-typed fields (prior_schedule) are config-file only


def _collect_overrides(args, cls, skip=()):
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        val = getattr(args, f.name, None)
        if val is not None:
            out[f.name] = val
    return out


def _load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise CliError(f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
    if not isinstance(doc, dict):
        raise CliError(f"{path}: top level must be a JSON object")
    for key in doc:
        if key not in ("train", "stream", "methods", "seeds"):
            raise CliError(f"{path}: unknown config section {key!r}")
    return doc


def _build_train_config(base: dict, method: str, seed: int) -> TrainConfig:
    d = dict(base)
    d["method"] = method
    d["seed"] = seed
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise CliError(f"invalid train config: {e}") from None


def execute_run(train_dict: dict, stream_dict: dict, data_csv: str | None):
    """One (method, seed) cell; top-level so grid workers can pickle it."""
    config = TrainConfig.from_dict(train_dict)
    spec = StreamSpec(**{**stream_dict, "seed": config.seed,
                         "n_experiences": config.n_experiences})
    if data_csv is not None:
        stream = ingest_csv(data_csv, n_classes=spec.n_classes, seed=config.seed)
        if len(stream) != config.n_experiences:
            raise CliError(
                f"{data_csv}: has {len(stream)} experiences, config expects {config.n_experiences}"
            )
    else:
        stream = generate_stream(spec)
    model = prepare_model(spec, config.seed)
    matrix, log = run_experiences(config, stream, model)
    return build_run_result(config, spec, matrix, log), log


def cmd_run(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    train_base = dict(file_cfg.get("train", {}))
    train_base.update(_collect_overrides(args, TrainConfig, skip=("method", "seed")))
    stream_base = dict(file_cfg.get("stream", {}))
    stream_base.update(_collect_overrides(args, StreamSpec,
                                          skip=("seed", "n_experiences", "prior_schedule")))
    methods = args.methods.split(",") if args.methods else file_cfg.get("methods", ["igem"])
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    else:
        seeds = file_cfg.get("seeds", [0])

    if args.data is not None and not os.path.exists(args.data):
        raise CliError(f"dataset file not found: {args.data}")
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    cells = []
    for method in methods:
        for seed in seeds:
            cfg = _build_train_config(train_base, method, seed)  # validate up front
            cells.append(cfg.to_dict())

    workers = int(os.environ.get("GEMPROJ_WORKERS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(execute_run, cells,
                                    [stream_base] * len(cells), [args.data] * len(cells)))
    else:
        outputs = [execute_run(c, stream_base, args.data) for c in cells]

    per_method: dict[str, list[dict]] = {}
    for cfg_dict, (doc, log) in zip(cells, outputs):
        method, seed = cfg_dict["method"], cfg_dict["seed"]
        stem = f"run_{method}_seed{seed}"
        write_json(os.path.join(out_dir, stem + ".json"), doc)
        write_curves_csv(os.path.join(out_dir, stem + "_curves.csv"), log)
        per_method.setdefault(method, []).append(doc)
        print(f"wrote {stem}.json  avg_acc={doc['metrics']['avg_acc']:.4f}")
    write_json(os.path.join(out_dir, "aggregate.json"), build_aggregate(per_method))
    print(f"wrote aggregate.json ({len(cells)} runs)")
    return 0


def cmd_verify(args) -> int:
    suites = list(verify_mod.SUITES) if args.suite == "all" else [args.suite]
    any_fail = False
    for suite in suites:
        for result in verify_mod.run_suite(suite):
            print(result.line())
            any_fail |= not result.passed
    return VERIFY_FAILURE if any_fail else 0


def cmd_bench(args) -> int:
    ms = tuple(int(v) for v in args.ms.split(","))
    ds = tuple(int(v) for v in args.ds.split(","))
    ks = tuple(int(v) for v in args.ks.split(","))
    rows = bench_mod.bench_igem_grid(ms, ds, ks, reps=args.reps)
    a, b, r2 = bench_mod.linear_fit_r2(rows)
    ordering = bench_mod.bench_ordering()
    csv_text = bench_mod.rows_to_csv(rows + list(ordering.values()))
    if args.out:
        from .results import atomic_write_text

        atomic_write_text(args.out, csv_text)
        print(f"wrote {args.out}")
    else:
        print(csv_text, end="")
    print(f"igem cost model: min_s ~ {a:.2e} + {b:.2e} * K*m*d,  R^2 = {r2:.4f}")
    cell = (ms[0], ds[len(ds) // 2], ks[0])
    err = bench_mod.adjacent_fit_error(rows, *cell)
    print(f"cell {cell} vs fit from adjacent cells: off by {err:.1%}")
    t = {k: v.mean_s for k, v in ordering.items()}
    ok = t["agem"] < t["igem"] < t["gem_exact"]
    print(
        "MPO ordering agem < igem < gem_exact: "
        + ("OK" if ok else "VIOLATED")
        + f"  (agem={t['agem']:.2e}s igem={t['igem']:.2e}s gem_exact={t['gem_exact']:.2e}s)"
    )
    idle = bench_mod.bench_identity_path()
    print("identity path (m=0) min times: "
          + " ".join(f"{k}={v:.2e}s" for k, v in idle.items()))
    return 0


def cmd_gen_data(args) -> int:
    overrides = _collect_overrides(args, StreamSpec, skip=("prior_schedule",))
    spec = StreamSpec(**overrides)
    stream = generate_stream(spec)
    dump_csv(stream, args.out)
    total = sum(s.n_train + s.n_test for s in stream)
    print(f"wrote {args.out}: {len(stream)} experiences, {total} rows")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gemproj", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train a (seed x method) grid")
    p_run.add_argument("--config", help="JSON config file (sections: train, stream, methods, seeds)")
    p_run.add_argument("--method", "--methods", dest="methods",
                       help="comma list from naive,gem_exact,agem,igem")
    p_run.add_argument("--seeds", help="comma list of integer seeds")
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.add_argument("--data", help="external dataset CSV (default: synthetic stream)")
    _add_dataclass_args(p_run, TrainConfig, skip=("method", "seed"))
    _add_dataclass_args(p_run, StreamSpec, skip=("seed", "n_experiences", "prior_schedule"))
    p_run.set_defaults(fn=cmd_run)

    p_verify = sub.add_parser("verify", help="run a property suite")
    p_verify.add_argument("suite", choices=list(verify_mod.SUITES) + ["all"])
    p_verify.set_defaults(fn=cmd_verify)

    p_bench = sub.add_parser("bench", help="time the projectors")
    p_bench.add_argument("--ms", default=",".join(str(v) for v in bench_mod.DEFAULT_MS))
    p_bench.add_argument("--ds", default=",".join(str(v) for v in bench_mod.DEFAULT_DS))
    p_bench.add_argument("--ks", default=",".join(str(v) for v in bench_mod.DEFAULT_KS))
    p_bench.add_argument("--reps", type=int, default=9)
    p_bench.add_argument("--out", help="write grid CSV here (default: stdout)")
    p_bench.set_defaults(fn=cmd_bench)

    p_gen = sub.add_parser("gen-data", help="dump a synthetic stream as CSV")
    p_gen.add_argument("--out", required=True, help="output CSV path")
    _add_dataclass_args(p_gen, StreamSpec, skip=("prior_schedule",))
    p_gen.set_defaults(fn=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
