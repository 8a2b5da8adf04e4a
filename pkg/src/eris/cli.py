"""Command-line entry point wiring datasets, training, evaluation, the flow
simulator, and parameter sweeps into reproducible runs.

Every subcommand writes a manifest capturing its fully resolved configuration
(no timestamps, nothing machine-specific), and accepts that manifest back via
--config: rerunning from a manifest reproduces all numeric outputs bitwise.
Flags win over config-file values. Exit codes: 0 success, 1 usage error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import SyntheticConfig, gen_synthetic, load_dataset, lodo_split, save_dataset
from .bench import ABLATION_CONFIGS, default_train_config
from .evaluate import (
    evaluate_model,
    export_embeddings,
    feature_correlation_matrix,
    mutual_information_matrix,
    save_matrix_csv,
)
from .linalg import Rng
from .model import ArchConfig, encode, load_params, save_params
from .orthoflow import save_trajectory, simulate_flow, verify_lemma
from .train import TrainConfig, fit, save_history


class UsageError(Exception):
    """Bad command line or config; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map usage errors to 1
        raise UsageError(message)


# TrainConfig field aliases accepted by --param and config files
_PARAM_ALIASES = {
    "lambda1": "lam1",
    "lambda2": "lam2",
    "lambda-adv": "lam_adv",
    "lambda_adv": "lam_adv",
}

_INT_TRAIN_FIELDS = {"lr_decay_every", "batch_size", "epochs", "adv_power_iters", "seed"}


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as f:
            cfg = json.load(f)
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if "command" in cfg and "config" in cfg:
        return cfg["config"]  # a manifest written by a previous run
    return cfg


def _write_manifest(command: str, config: dict, out: str, directory: bool) -> None:
    path = Path(out) / "manifest.json" if directory else Path(str(out) + ".manifest.json")
    payload = {"command": command, "config": config}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _resolve_train_config(file_cfg: dict, args) -> TrainConfig:
    spec = dict(file_cfg.get("train", {}))
    spec = {_PARAM_ALIASES.get(k, k): v for k, v in spec.items()}
    if args.lambda1 is not None:
        spec["lam1"] = args.lambda1
    if args.lambda2 is not None:
        spec["lam2"] = args.lambda2
    if args.lambda_adv is not None:
        spec["lam_adv"] = args.lambda_adv
    if args.epochs is not None:
        spec["epochs"] = args.epochs
    if args.seed is not None:
        spec["seed"] = args.seed
    if args.no_dse:
        spec["enable_dse"] = False
    if args.no_lse:
        spec["enable_lse"] = False
    if args.no_ortho:
        spec["enable_ortho"] = False
    if args.no_ag:
        spec["enable_ag"] = False
    return TrainConfig.from_dict(spec)


def _resolve_arch(file_cfg: dict, ds) -> ArchConfig:
    spec = dict(file_cfg.get("arch", {}))
    spec.setdefault("channels_per_layer", (16, 16))
    spec["in_channels"] = ds.channels
    spec["n_classes"] = ds.n_classes
    spec["n_domains"] = ds.n_domains
    return ArchConfig.from_dict(spec)


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"missing required flag {flag}")
    return value


def _cmd_gen_data(args) -> int:
    file_cfg = _load_config_file(args.config)
    spec = dict(file_cfg.get("synthetic", {}))
    if args.seed is not None:
        spec["seed"] = args.seed
    for tup in ("domain_scale_range", "domain_offset_range"):
        if tup in spec:
            spec[tup] = tuple(spec[tup])
    synth = SyntheticConfig(**spec)
    out = _require(args.out, "--out")
    ds = gen_synthetic(synth)
    save_dataset(ds, out)
    resolved = {"synthetic": {**asdict(synth)}, "out": out}
    _write_manifest("gen-data", resolved, out, directory=False)
    print(f"wrote {ds.num_samples} samples to {out}")
    return 0


def _cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    data_path = _require(args.data or file_cfg.get("dataset"), "--data")
    target = args.target_domain if args.target_domain is not None else file_cfg.get("target_domain")
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(data_path)
    train_ds = ds if target is None else lodo_split(ds, target)[0]
    arch = _resolve_arch(file_cfg, ds)
    cfg = _resolve_train_config(file_cfg, args)
    params, history = fit(train_ds, cfg, arch)
    save_params(params, str(out / "params.bin"))
    save_history(history, str(out / "history.csv"))
    resolved = {"dataset": data_path, "target_domain": target,
                "arch": arch.to_dict(), "train": cfg.to_dict()}
    _write_manifest("train", resolved, str(out), directory=True)
    final = history.records[-1]
    print(f"trained {cfg.epochs} epochs; final l_total={final.losses.l_total:.6g} "
          f"train_acc={final.train_acc:.4f} cross_norm={final.cross_norm:.6g}")
    return 0


def _cmd_eval(args) -> int:
    file_cfg = _load_config_file(args.config)
    data_path = _require(args.data or file_cfg.get("dataset"), "--data")
    params_path = _require(args.params or file_cfg.get("params"), "--params")
    target = args.target_domain if args.target_domain is not None else file_cfg.get("target_domain")
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(data_path)
    eval_ds = ds if target is None else lodo_split(ds, target)[1]
    params = load_params(params_path)
    report = evaluate_model(params, eval_ds)
    resolved = {"dataset": data_path, "params": params_path, "target_domain": target}
    (out / "metrics.json").write_text(report.to_json(config_echo=resolved) + "\n")
    f0 = encode(params, eval_ds.samples)
    save_matrix_csv(feature_correlation_matrix(f0), str(out / "corr.csv"))
    save_matrix_csv(mutual_information_matrix(f0), str(out / "mi.csv"))
    export_embeddings(params, eval_ds, str(out / "embeddings.csv"))
    _write_manifest("eval", resolved, str(out), directory=True)
    print(f"accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f} ece={report.ece:.4f}")
    return 0


def _cmd_ortho_sim(args) -> int:
    file_cfg = _load_config_file(args.config)
    h = args.h if args.h is not None else file_cfg.get("h", 16)
    d = args.d if args.d is not None else file_cfg.get("d", 8)
    dt = args.dt if args.dt is not None else file_cfg.get("dt", 1e-3)
    steps = args.steps if args.steps is not None else file_cfg.get("steps", 200_000)
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    log_every = file_cfg.get("log_every", 1)
    tol = file_cfg.get("tol", 1e-8)
    out = _require(args.out, "--out")
    rng = Rng(seed)
    w_d = rng.normal(h, d, 1.0)
    w_l = rng.normal(h, d, 1.0)
    traj = simulate_flow(w_d, w_l, dt=dt, steps=steps, log_every=log_every)
    save_trajectory(traj, out)
    cert = verify_lemma(traj, tol=tol)
    cert_payload = {
        "max_increase": cert.max_increase,
        "final_loss": cert.final_loss,
        "initial_loss": traj.ortho_loss[0],
        "final_cross_norm": cert.final_cross_norm,
        "certified": cert.certified,
        "violation_index": cert.violation_index,
    }
    Path(str(out) + ".cert.json").write_text(json.dumps(cert_payload, indent=2, sort_keys=True) + "\n")
    resolved = {"h": h, "d": d, "dt": dt, "steps": steps, "seed": seed,
                "log_every": log_every, "tol": tol, "out": str(out)}
    _write_manifest("ortho-sim", resolved, out, directory=False)
    print(f"certified={cert.certified} final_loss={cert.final_loss:.6g} "
          f"initial_loss={traj.ortho_loss[0]:.6g}")
    return 0


def _worker_count(n_tasks: int) -> int:
    cap = int(os.environ.get("ERIS_THREADS", "1"))
    return max(1, min(cap, n_tasks))


def _sweep_one(packed):
    data_path, target, arch_spec, train_spec, field, value = packed
    ds = load_dataset(data_path)
    train_ds, test_ds = (ds, ds) if target is None else lodo_split(ds, target)
    arch = ArchConfig.from_dict(arch_spec)
    spec = dict(train_spec)
    spec[field] = int(value) if field in _INT_TRAIN_FIELDS else value
    cfg = TrainConfig.from_dict(spec)
    params, _ = fit(train_ds, cfg, arch)
    report = evaluate_model(params, test_ds)
    return value, report


def _cmd_sweep(args) -> int:
    file_cfg = _load_config_file(args.config)
    data_path = _require(args.data or file_cfg.get("dataset"), "--data")
    param = _require(args.param or file_cfg.get("param"), "--param")
    field = _PARAM_ALIASES.get(param, param)
    if field not in TrainConfig.from_dict({}).to_dict():
        raise UsageError(f"unknown sweep parameter {param}")
    raw_values = args.values or file_cfg.get("values")
    values = ([float(v) for v in raw_values.split(",")] if isinstance(raw_values, str)
              else [float(v) for v in _require(raw_values, "--values")])
    target = args.target_domain if args.target_domain is not None else file_cfg.get("target_domain")
    out = _require(args.out, "--out")
    ds = load_dataset(data_path)
    arch = _resolve_arch(file_cfg, ds)
    base = _resolve_train_config(file_cfg, args)
    tasks = [(data_path, target, arch.to_dict(), base.to_dict(), field, v) for v in values]
    workers = _worker_count(len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([param, "accuracy", "macro_f1", "macro_precision",
                         "macro_recall", "ece", "dse_rank_corr"])
        for value, rep in rows:
            writer.writerow(["%.17g" % value] + ["%.17g" % v for v in (
                rep.accuracy, rep.macro_f1, rep.macro_precision,
                rep.macro_recall, rep.ece, rep.dse_rank_corr)])
    resolved = {"dataset": data_path, "target_domain": target, "param": param,
                "values": values, "arch": arch.to_dict(), "train": base.to_dict()}
    _write_manifest("sweep", resolved, out, directory=False)
    print(f"swept {param} over {len(values)} values -> {out}")
    return 0


def _ablate_one(packed):
    data_path, target, arch_spec, train_spec, name, out_dir = packed
    ds = load_dataset(data_path)
    train_ds, test_ds = (ds, ds) if target is None else lodo_split(ds, target)
    arch = ArchConfig.from_dict(arch_spec)
    spec = dict(train_spec)
    spec.update(ABLATION_CONFIGS[name])
    cfg = TrainConfig.from_dict(spec)
    params, history = fit(train_ds, cfg, arch)
    sub = Path(out_dir) / f"config-{name}"
    sub.mkdir(parents=True, exist_ok=True)
    save_params(params, str(sub / "params.bin"))
    save_history(history, str(sub / "history.csv"))
    report = evaluate_model(params, test_ds)
    (sub / "metrics.json").write_text(report.to_json(config_echo={"config": name}) + "\n")
    return name, report


def _cmd_ablate(args) -> int:
    file_cfg = _load_config_file(args.config)
    data_path = _require(args.data or file_cfg.get("dataset"), "--data")
    target = args.target_domain if args.target_domain is not None else file_cfg.get("target_domain")
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(data_path)
    arch = _resolve_arch(file_cfg, ds)
    base = _resolve_train_config(file_cfg, args)
    names = list(file_cfg.get("configs", "ABCDEFG"))
    unknown = [n for n in names if n not in ABLATION_CONFIGS]
    if unknown:
        raise UsageError(f"unknown ablation configuration(s): {unknown}")
    tasks = [(data_path, target, arch.to_dict(), base.to_dict(), n, str(out)) for n in names]
    workers = _worker_count(len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = dict(pool.map(_ablate_one, tasks))
    else:
        rows = dict(_ablate_one(t) for t in tasks)
    with open(out / "summary.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["config", "accuracy", "macro_f1", "macro_precision",
                         "macro_recall", "ece", "dse_rank_corr"])
        for name in names:
            rep = rows[name]
            writer.writerow([name] + ["%.17g" % v for v in (
                rep.accuracy, rep.macro_f1, rep.macro_precision,
                rep.macro_recall, rep.ece, rep.dse_rank_corr)])
    resolved = {"dataset": data_path, "target_domain": target, "configs": "".join(names),
                "arch": arch.to_dict(), "train": base.to_dict()}
    _write_manifest("ablate", resolved, str(out), directory=True)
    print(f"ablation over {''.join(names)} -> {out / 'summary.csv'}")
    return 0


def _cmd_report(args) -> int:
    inputs = args.inputs or _load_config_file(args.config).get("inputs", [])
    if not inputs:
        raise UsageError("report needs metrics.json paths")
    out = _require(args.out, "--out")
    fields = ["accuracy", "macro_f1", "macro_precision", "macro_recall", "ece", "dse_rank_corr"]
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["source"] + fields)
        for path in inputs:
            payload = json.loads(Path(path).read_text())
            writer.writerow([path] + ["%.17g" % payload[k] for k in fields])
    _write_manifest("report", {"inputs": list(inputs), "out": out}, out, directory=False)
    print(f"aggregated {len(inputs)} report(s) -> {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="eris", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, params=False):
        p.add_argument("--config", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        if data:
            p.add_argument("--data", default=None)
            p.add_argument("--target-domain", dest="target_domain", type=int, default=None)
            p.add_argument("--lambda1", type=float, default=None)
            p.add_argument("--lambda2", type=float, default=None)
            p.add_argument("--lambda-adv", dest="lambda_adv", type=float, default=None)
            p.add_argument("--epochs", type=int, default=None)
            p.add_argument("--no-dse", dest="no_dse", action="store_true")
            p.add_argument("--no-lse", dest="no_lse", action="store_true")
            p.add_argument("--no-ortho", dest="no_ortho", action="store_true")
            p.add_argument("--no-ag", dest="no_ag", action="store_true")
        if params:
            p.add_argument("--params", default=None)

    common(sub.add_parser("gen-data", help="generate a synthetic dataset CSV"))
    common(sub.add_parser("train", help="train on a leave-one-domain-out split"), data=True)
    common(sub.add_parser("eval", help="evaluate saved parameters"), data=True, params=True)
    p = sub.add_parser("ortho-sim", help="integrate the orthogonality gradient flow")
    common(p)
    p.add_argument("--h", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p = sub.add_parser("sweep", help="train/evaluate over a grid of one parameter")
    common(p, data=True)
    p.add_argument("--param", default=None)
    p.add_argument("--values", default=None)
    common(sub.add_parser("ablate", help="run the ablation configurations"), data=True)
    p = sub.add_parser("report", help="aggregate metrics JSON files into one CSV")
    common(p)
    p.add_argument("inputs", nargs="*")
    return parser


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ortho-sim": _cmd_ortho_sim,
    "sweep": _cmd_sweep,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}


def run(argv: list[str]) -> int:
    """Parse argv and execute one subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse -h
        return 0 if exc.code in (0, None) else 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
