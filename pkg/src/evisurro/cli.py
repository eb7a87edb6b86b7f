"""Command-line pipeline: simulate, train, predict, calibrate, evaluate, serve.

Every flag can also come from a config file (INI-style ``key = value``
under a section named after the subcommand); explicit flags win. The
fully resolved configuration is echoed before the command runs, and all
artifacts are addressed by explicit paths.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import conformal as cf
from . import data as dat
from . import metrics as mx
from . import server as srv
from . import training as tr
from .container import ContainerError, write_container
from .evidential import LossWeights
from .network import NetConfig
from .wire import grid_payload, wire_dumps

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULT_LEVELS = [round(0.01 * k, 2) for k in range(1, 31)]


class CliConfigError(Exception):
    pass


def parse_grid(text):
    try:
        dims = tuple(int(p) for p in str(text).lower().split("x"))
    except ValueError:
        raise CliConfigError(f"bad grid {text!r}; expected e.g. 32x32") from None
    if not dims or any(d < 1 for d in dims):
        raise CliConfigError(f"bad grid {text!r}; dimensions must be positive")
    return dims


def parse_int_list(text):
    return tuple(int(p) for p in str(text).split(",") if p.strip())


def parse_float_list(text):
    return [float(p) for p in str(text).split(",") if p.strip()]


def parse_region(text):
    """dim:lo:hi[,dim:lo:hi ...] constraints for the sparse-region flag."""
    if not str(text).strip():
        return None
    region = []
    for clause in str(text).split(","):
        parts = clause.split(":")
        if len(parts) != 3:
            raise CliConfigError(
                f"bad sparse-region clause {clause!r}; expected dim:lo:hi"
            )
        region.append((int(parts[0]), float(parts[1]), float(parts[2])))
    return region


def _str(v):
    return v


# Per-subcommand option tables: name -> (parser, default, help). A default
# of ... marks a required setting (flag or config file).
OPTION_TABLES = {
    "simulate": {
        "out": (_str, ..., "output dataset directory"),
        "grid": (parse_grid, (32, 32), "grid dimensions, e.g. 32x32 or 16x16x16"),
        "d": (int, 3, "parameter-space dimension"),
        "train": (int, 128, "training members"),
        "cal": (int, 200, "calibration members"),
        "test": (int, 100, "test members"),
        "seed": (int, 0, "parameter-draw seed"),
        "sim": (_str, "two_bumps", "registered simulator name"),
        "noise": (_str, "heteroscedastic", "noise model"),
        "sim_seed": (int, 0, "simulator noise seed"),
        "sparse_region": (parse_region, None, "exclude dim:lo:hi from training draws"),
        "force": (lambda v: str(v).lower() in ("1", "true", "yes"), False,
                  "overwrite a non-empty output directory"),
    },
    "train": {
        "dataset": (_str, ..., "dataset directory"),
        "out": (_str, ..., "output checkpoint path"),
        "epochs": (int, 300, "training epochs"),
        "batch_size": (int, 16, "minibatch size"),
        "lr": (float, 1e-3, "Adam learning rate"),
        "lam": (float, 0.01, "evidence regularizer weight (lambda)"),
        "xi": (float, 0.05, "uncertainty regularizer weight (xi)"),
        "hidden": (parse_int_list, (64, 128, 256), "hidden layer widths"),
        "seed": (int, 0, "shuffle seed"),
        "net_seed": (int, 0, "weight init seed"),
        "patience": (int, None, "early-stopping patience (epochs)"),
        "resume": (_str, None, "checkpoint to continue from"),
        "log": (_str, None, "loss log path (default: <out>.log)"),
    },
    "predict": {
        "checkpoint": (_str, ..., "checkpoint path"),
        "params": (parse_float_list, ..., "comma-separated parameter vector"),
        "out": (_str, None, "output JSON path (default: stdout)"),
    },
    "calibrate": {
        "checkpoint": (_str, ..., "checkpoint path"),
        "dataset": (_str, ..., "dataset directory"),
        "out": (_str, ..., "output table path"),
        "delta": (float, 0.1, "raw-interval miscoverage used for scores"),
    },
    "evaluate": {
        "checkpoint": (_str, ..., "checkpoint path"),
        "dataset": (_str, ..., "dataset directory"),
        "out_dir": (_str, ..., "report output directory"),
        "table": (_str, None, "calibration table (omit for uncalibrated only)"),
        "levels": (parse_float_list, None, "comma-separated miscoverage levels"),
        "data_range": (float, None, "PSNR range override (default: train-split range)"),
    },
    "serve": {
        "checkpoint": (_str, ..., "checkpoint path"),
        "table": (_str, None, "calibration table"),
        "dataset": (_str, None, "dataset directory (source of parameter ranges)"),
        "host": (_str, "127.0.0.1", "bind host"),
        "port": (int, 8000, "bind port"),
        "cors_origin": (_str, None, "allowed CORS origin for the explorer UI"),
    },
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="evisurro",
        description="Evidential surrogate modeling with conformal calibration",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, table in OPTION_TABLES.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="INI config file")
        for name, (_, default, help_text) in table.items():
            flag = "--" + name.replace("_", "-")
            if name == "force":
                p.add_argument(flag, action="store_const", const=True,
                               default=None, help=help_text)
            else:
                req = " (required)" if default is ... else ""
                p.add_argument(flag, default=None, help=help_text + req)
    return parser


def resolve_config(args):
    """Merge CLI flags over config-file values over defaults."""
    table = OPTION_TABLES[args.command]
    file_values = {}
    if args.config:
        ini = configparser.ConfigParser()
        read = ini.read(args.config)
        if not read:
            raise CliConfigError(f"config file not found: {args.config}")
        if ini.has_section(args.command):
            file_values = dict(ini.items(args.command))

    resolved = {}
    for name, (parse, default, _) in table.items():
        cli_value = getattr(args, name)
        if cli_value is not None:
            resolved[name] = parse(cli_value) if isinstance(cli_value, str) else cli_value
        elif name in file_values:
            resolved[name] = parse(file_values[name])
        elif default is ...:
            raise CliConfigError(f"missing required setting --{name.replace('_', '-')}")
        else:
            resolved[name] = default
    for key, value in resolved.items():
        print(f"config {args.command}: {key} = {value}")
    return resolved


def cmd_simulate(cfg):
    out = Path(cfg["out"])
    if out.exists() and any(out.iterdir()) and not cfg["force"]:
        raise CliConfigError(f"{out} exists and is not empty (use --force)")
    spec = dat.SimulatorSpec(
        name=cfg["sim"],
        d=cfg["d"],
        grid_shape=cfg["grid"],
        noise_model=cfg["noise"],
        seed=cfg["sim_seed"],
    )
    ds = dat.generate_dataset(
        spec,
        cfg["train"],
        cfg["cal"],
        cfg["test"],
        seed=cfg["seed"],
        sparse_region=cfg["sparse_region"],
    )
    dat.save_dataset(ds, out)
    for split, count in ds.counts().items():
        print(f"{split}: {count} members")
    return EXIT_OK


def cmd_train(cfg):
    ds = dat.load_dataset(cfg["dataset"])
    initial = None if cfg["resume"] is None else tr.load_checkpoint(cfg["resume"])
    net_config = NetConfig(
        input_dim=ds.param_ranges.shape[0],
        hidden_sizes=cfg["hidden"],
        grid_shape=ds.grid_shape,
        seed=cfg["net_seed"],
    )
    train_config = tr.TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["lr"],
        weights=LossWeights(lambda_reg=cfg["lam"], xi_reg=cfg["xi"]),
        seed=cfg["seed"],
        patience=cfg["patience"],
    )
    log_path = cfg["log"] or (str(cfg["out"]) + ".log")
    ckpt = tr.fit(ds, net_config, train_config, log_path=log_path, initial=initial)
    tr.save_checkpoint(ckpt, cfg["out"])
    print(
        f"trained {len(ckpt.loss_history)} epochs,"
        f" final loss {ckpt.loss_history[-1]:.6f}, checkpoint -> {cfg['out']}"
    )
    return EXIT_OK


def cmd_predict(cfg):
    ckpt = tr.load_checkpoint(cfg["checkpoint"])
    x = np.asarray(cfg["params"], dtype=np.float64)
    if x.shape != (ckpt.net.config.input_dim,):
        raise CliConfigError(
            f"expected {ckpt.net.config.input_dim} parameters, got {x.size}"
        )
    summary = ckpt.predict(x)
    payload = grid_payload(
        mean=summary.prediction,
        aleatoric=summary.aleatoric,
        epistemic=summary.epistemic,
    )
    text = wire_dumps(payload)
    if cfg["out"] is None:
        print(text)
    else:
        Path(cfg["out"]).write_text(text + "\n")
    return EXIT_OK


def cmd_calibrate(cfg):
    if not 0.0 < cfg["delta"] < 1.0:
        raise CliConfigError("delta must lie in (0, 1)")
    ckpt = tr.load_checkpoint(cfg["checkpoint"])
    ds = dat.load_dataset(cfg["dataset"])
    table = cf.build_table(ckpt, ds, cfg["delta"])
    cf.save_table(table, cfg["out"])
    bound = cf.max_confidence(table.n)
    print(
        f"calibration size n = {table.n}; scores at delta = {table.delta};"
        f" max attainable confidence = {bound:.6f}"
    )
    if 1.0 - cfg["delta"] > bound:
        print(
            f"warning: confidence {1.0 - cfg['delta']:.6f} is unattainable with"
            f" n = {table.n}; requests above {bound:.6f} will be flagged"
        )
    print(f"table -> {cfg['out']}")
    return EXIT_OK


def _metric_records(ckpt, ds, data_range):
    members = ds.split("test")
    x = np.stack([m.params for m in members]).astype(np.float64)
    truth = np.stack([m.field for m in members]).astype(np.float64)
    summary = ckpt.predict(x)
    pred = np.asarray(summary.prediction)

    train_fields = np.stack([m.field for m in ds.split("train")]).astype(np.float64)
    train_range = float(train_fields.max() - train_fields.min())
    global_range = data_range if data_range is not None else train_range

    ssim_feasible = min(ds.grid_shape) >= 11
    member_rows = []
    for i, m in enumerate(members):
        member_range = float(truth[i].max() - truth[i].min()) or global_range
        member_rows.append(
            {
                "member_id": m.member_id,
                "psnr_train_range": mx.psnr(pred[i], truth[i], global_range),
                "psnr_member_range": mx.psnr(pred[i], truth[i], member_range),
                "ssim": mx.ssim(pred[i], truth[i], global_range)
                if ssim_feasible
                else None,
            }
        )

    abs_err = np.abs(pred - truth)
    epistemic = np.asarray(summary.epistemic)
    summary_rows = [
        {
            "metric": "psnr_train_range",
            "mean": float(np.mean([r["psnr_train_range"] for r in member_rows])),
            "data_range": global_range,
        },
        {
            "metric": "ssim",
            "mean": float(np.mean([r["ssim"] for r in member_rows]))
            if ssim_feasible
            else None,
            "data_range": global_range,
        },
        {
            "metric": "epistemic_vs_abs_error",
            "voxel_level": mx.voxel_level_corr(epistemic, abs_err),
            "member_level": mx.member_level_corr(epistemic, abs_err),
        },
    ]
    noise_members = [m for m in members if m.truth_noise_var is not None]
    if len(noise_members) == len(members) and len(members) >= 3:
        noise_truth = np.stack([m.truth_noise_var for m in members]).astype(np.float64)
        if np.ptp(noise_truth) > 0:
            aleatoric = np.asarray(summary.aleatoric)
            summary_rows.append(
                {
                    "metric": "aleatoric_vs_truth_noise_var",
                    "voxel_level": mx.voxel_level_corr(aleatoric, noise_truth),
                    "member_level": mx.member_level_corr(aleatoric, noise_truth),
                }
            )
    return member_rows, summary_rows


def cmd_evaluate(cfg):
    ckpt = tr.load_checkpoint(cfg["checkpoint"])
    ds = dat.load_dataset(cfg["dataset"])
    if not ds.split("test"):
        raise dat.DatasetError(
            "test split is empty; simulate with --test > 0 before evaluating"
        )
    table = None if cfg["table"] is None else cf.load_table(cfg["table"])
    levels = cfg["levels"] or DEFAULT_LEVELS

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    report = cf.coverage_audit(ckpt, table, ds, levels)
    (out_dir / "coverage_records.jsonl").write_text(report.to_jsonl())
    (out_dir / "coverage_summary.txt").write_text(report.summary_table() + "\n")

    maps = {}
    for audit in report.audits:
        tag = format(audit.level, ".6g")
        maps[f"map/{tag}/uncalibrated"] = audit.uncalibrated.per_element_coverage
        if audit.calibrated is not None:
            maps[f"map/{tag}/calibrated"] = audit.calibrated.per_element_coverage
    write_container(out_dir / "coverage_maps.bin", maps)

    member_rows, summary_rows = _metric_records(ckpt, ds, cfg["data_range"])
    (out_dir / "member_metrics.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in member_rows)
    )
    (out_dir / "metric_summary.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in summary_rows)
    )
    print(report.summary_table())
    print(f"reports -> {out_dir}")
    return EXIT_OK


def cmd_serve(cfg):
    param_ranges = None
    if cfg["dataset"] is not None:
        param_ranges = dat.load_dataset(cfg["dataset"]).param_ranges
    bundle = srv.ModelBundle.load(
        cfg["checkpoint"], cfg["table"], param_ranges=param_ranges
    )
    print(f"serving on {cfg['host']}:{cfg['port']}")
    srv.run(bundle, host=cfg["host"], port=cfg["port"], cors_origin=cfg["cors_origin"])
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "serve": cmd_serve,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except CliConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (dat.DatasetError, cf.ConformalError, ContainerError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (tr.TrainingDivergedError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
