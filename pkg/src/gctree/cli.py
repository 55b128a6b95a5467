"""Command-line interface: ``gct <subcommand> [flags]``.

Every command prints its resolved configuration as one JSON line on stdout
and embeds the same block in the JSON artifacts it writes. Failures print a
single ``gct: error code=<code> message=<text>`` line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path


from .causal_tree import GrowthConfig
from .data import CsvSchema, DataError, load_dataset, save_dataset, split_honest
from .pipeline import GctModel, allocate, derive_seed, fit_gct
from .simulation import (
    BENCH_CONFIG,
    SimSetting,
    generate,
    report_csv,
    report_json,
    report_text,
    run_bench,
)
from .transform import remove_features
from .tree import DecisionTree, TreeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4
SETTINGS = ("continuous", "ordinal", "categorical")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")


def _schema_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--treatment-col", default="t")
    p.add_argument("--response-col", default="y")
    p.add_argument("--control-value", default="0")
    p.add_argument("--categorical", default="", help="comma-separated categorical feature columns")


def _growth_flags(p: argparse.ArgumentParser, defaults: GrowthConfig) -> None:
    p.add_argument("--max-depth", type=int, default=defaults.max_depth)
    p.add_argument("--min-arm-leaf", type=int, default=defaults.min_arm_samples_leaf)
    p.add_argument("--max-thresholds", type=int, default=defaults.max_threshold_candidates)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gct", description="Generalized causal trees for uplift modeling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model from a CSV file")
    p.add_argument("--input", required=True, help="training CSV")
    p.add_argument("--estimation", help="separate estimation CSV (default: split --input)")
    p.add_argument("--honest-fraction", type=float, default=0.5)
    p.add_argument("--no-honest", action="store_true", help="estimate leaf effects on training rows")
    p.add_argument("--output", required=True, help="model JSON path")
    _schema_flags(p)
    _growth_flags(p, GrowthConfig())
    _common(p)

    p = sub.add_parser("transform", help="remove axes from a tree")
    p.add_argument("--input", required=True, help="tree JSON, or a model JSON (its joint tree is used)")
    p.add_argument("--remove", required=True, help="comma-separated axis names")
    p.add_argument("--output", required=True, help="rewritten tree JSON path")
    _common(p)

    p = sub.add_parser("allocate", help="derive the per-cohort allocation rule")
    p.add_argument("--input", required=True, help="model JSON")
    p.add_argument("--output", required=True, help="rule JSON path")
    _common(p)

    p = sub.add_parser("predict", help="estimated effects for points in a CSV file")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--input", required=True, help="CSV with feature columns and a treatment column")
    p.add_argument("--output", required=True, help="effects CSV path")
    p.add_argument("--treatment-col", default="t")
    _common(p)

    p = sub.add_parser("simulate", help="write one synthetic replication as CSV files")
    p.add_argument("--setting", choices=SETTINGS, required=True)
    p.add_argument("--n", type=int, default=1000, help="rows per train/test half")
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--output", required=True, help="output directory")
    _common(p)

    p = sub.add_parser("bench", help="run the synthetic benchmark")
    p.add_argument("--setting", choices=SETTINGS + ("all",), default="all")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--output", help="output directory for report.json, report.txt, per_rep.csv")
    _growth_flags(p, BENCH_CONFIG)
    _common(p)
    return parser


def _config_block(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items())}


def _growth(args: argparse.Namespace, honest: bool = True) -> GrowthConfig:
    try:
        return GrowthConfig(
            max_depth=args.max_depth,
            min_arm_samples_leaf=args.min_arm_leaf,
            max_threshold_candidates=args.max_thresholds,
            honest=honest,
            seed=args.seed,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _write_json(path: str, body: dict) -> None:
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None


def cmd_train(args) -> None:
    schema = CsvSchema(
        treatment_col=args.treatment_col,
        response_col=args.response_col,
        control_value=args.control_value,
        categorical_features=tuple(c for c in args.categorical.split(",") if c),
    )
    data = load_dataset(args.input, schema)
    cfg = _growth(args, honest=not args.no_honest)
    if args.estimation:
        train, est = data, load_dataset(args.estimation, schema, role="estimation")
    elif cfg.honest:
        train, est = split_honest(data, args.honest_fraction, seed=derive_seed(args.seed, "honest-split"))
    else:
        train, est = data, None
    model = fit_gct(train, est, cfg)
    body = model.to_dict()
    body["command_config"] = _config_block(args)
    _write_json(args.output, body)


def cmd_transform(args) -> None:
    d = _read_json(args.input)
    tree = DecisionTree.from_dict(d["joint_tree"] if "joint_tree" in d else d)
    names = [a.strip() for a in args.remove.split(",") if a.strip()]
    unknown = [a for a in names if a not in [ax.name for ax in tree.axes]]
    if not names or unknown:
        raise UsageError(f"unknown axis name(s) {unknown or names}")
    out = remove_features(tree, names)
    body = out.to_dict()
    body["cohorts"] = [
        {"key": k, "id_set": sorted(out[k].ids), "cohort": out.box(k).describe()}
        for k in out.leaves()
    ]
    body["command_config"] = _config_block(args)
    _write_json(args.output, body)


def _load_model(path: str) -> GctModel:
    d = _read_json(path)
    if d.get("format") != "gct-model/1":
        raise DataError(f"{path}: not a model file")
    return GctModel.from_dict(d)


def cmd_allocate(args) -> None:
    model = _load_model(args.input)
    body = allocate(model).to_dict(model)
    body["command_config"] = _config_block(args)
    _write_json(args.output, body)


def cmd_predict(args) -> None:
    model = _load_model(args.model)
    with open(args.input, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    names = [f.name for f in model.features]
    header = list(rows[0].keys()) if rows else []
    missing = [c for c in names + [args.treatment_col] if c not in header]
    if missing:
        raise DataError(f"missing column(s) {missing}")
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(names + [args.treatment_col, "effect"])
        for i, r in enumerate(rows):
            x = []
            for spec in model.features:
                cell = r[spec.name]
                try:
                    x.append(cell if spec.kind == "categorical" else float(cell))
                except ValueError:
                    raise DataError(f"row {i}: cannot parse {spec.name}={cell!r}") from None
            t = r[args.treatment_col]
            if model.treatment_kind != "categorical":
                try:
                    t = float(t)
                except ValueError:
                    raise DataError(f"row {i}: cannot parse treatment {t!r}") from None
                if model.treatment_kind == "ordinal":
                    t = int(t)
            eff = model.predict(model.encode_x(x)[None, :], model.encode_z(t))[0]
            out.writerow([r[c] for c in names] + [r[args.treatment_col], repr(float(eff))])


def _setting(args, kind: str) -> SimSetting:
    try:
        return SimSetting(kind, n=args.n, noise_sd=args.noise_sd,
                          reps=getattr(args, "reps", 1), seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_simulate(args) -> None:
    setting = _setting(args, args.setting)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    train, test_X = generate(setting, setting.rep_seed(0))
    save_dataset(train, out / "train.csv")
    with (out / "test.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["X1", "X2"])
        w.writerows([[repr(float(a)), repr(float(b))] for a, b in test_X])
    _write_json(str(out / "config.json"), {"command_config": _config_block(args), "setting": setting.to_dict()})


def cmd_bench(args) -> None:
    kinds = SETTINGS if args.setting == "all" else (args.setting,)
    cfg = _growth(args)
    results = [run_bench(_setting(args, k), cfg) for k in kinds]
    text = report_text(results)
    print(text)
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        body = json.loads(report_json(results))
        body["command_config"] = _config_block(args)
        _write_json(str(out / "report.json"), body)
        (out / "report.txt").write_text(text + "\n", encoding="utf-8")
        (out / "per_rep.csv").write_text(report_csv(results), encoding="utf-8")


COMMANDS = {
    "train": cmd_train,
    "transform": cmd_transform,
    "allocate": cmd_allocate,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
}


def _fail(code: str, status: int, message: str) -> int:
    one_line = " ".join(str(message).split())
    print(f"gct: error code={code} message={one_line}", file=sys.stderr)
    return status


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        return _fail("usage", EXIT_USAGE, e)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    print(json.dumps({"command_config": _config_block(args)}, sort_keys=True))
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        return _fail("usage", EXIT_USAGE, e)
    except (DataError, OSError) as e:
        return _fail("data", EXIT_DATA, e)
    except TreeError as e:
        return _fail("model", EXIT_MODEL, e)
    except (KeyError, TypeError) as e:
        return _fail("model", EXIT_MODEL, f"malformed model or tree file: {e}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
