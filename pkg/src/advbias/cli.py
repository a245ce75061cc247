"""advbias command line: synth-data, train, attack, transfer, interpret, report.

Every subcommand accepts ``--config file.json``; explicit flags override
values from the file, and the merged settings are written next to the
outputs so a run can be replayed.  Exit codes: 0 ok, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import attack as atk
from . import evalharness as eh
from . import interpret as itp
from .biasfield import LogBiasField, save_bias_pgm
from .classifier import MlpClassifier, accuracy, load_dataset, save_dataset, synth_dataset, train
from .imagekit import GrayImage, load_pgm, save_pgm

DEFAULTS = {
    "synth-data": {"seed": 42, "n_per_class": 200, "out": None},
    "train": {"data": None, "seed": 42, "epochs": 50, "lr": 0.05, "hidden": 64,
              "test_data": None, "test_seed": 7, "test_n": 100, "out": None},
    "attack": {"model": None, "data": None, "attack": "advsbf", "limit": None, "out": None},
    "transfer": {"models": None, "data": None, "attack": "advsbf", "limit": None, "out": None},
    "interpret": {"model": None, "attack_dir": None, "data": None, "iterations": 150,
                  "lambda1": 0.05, "lambda2": 0.2, "step": 0.05, "out": None},
    "report": {"inputs": None, "out": None},
}
ATTACK_DEFAULTS = {
    "grid": 16, "degree": 10, "d0": 1, "lambda_a": 0.01, "lambda_theta": 0.01,
    "eps_a": 0.06, "eps_theta": 0.06, "iters": 10, "eps": 0.1, "step": None,
    "momentum": 1.0, "floor": 1 / 255, "ridge": 0.0,
}


class UsageError(Exception):
    pass


def _attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--attack", choices=sorted(atk.ATTACKS), default=None)
    p.add_argument("--grid", type=int)
    p.add_argument("--degree", type=int)
    p.add_argument("--d0", type=int)
    p.add_argument("--lambda-a", type=float)
    p.add_argument("--lambda-theta", type=float)
    p.add_argument("--eps-a", type=float)
    p.add_argument("--eps-theta", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--eps", type=float, help="noise attacks: infinity-norm budget in the log domain")
    p.add_argument("--step", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--floor", type=float)
    p.add_argument("--ridge", type=float)
    p.add_argument("--limit", type=int, help="attack at most this many eligible images")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advbias", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a phantom dataset as PGMs + labels.csv")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--out")

    p = sub.add_parser("train", help="train the MLP subject model")
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--test-data")
    p.add_argument("--test-seed", type=int)
    p.add_argument("--test-n", type=int)
    p.add_argument("--out", help="model JSON path")

    p = sub.add_parser("attack", help="attack every correctly classified image")
    p.add_argument("--model")
    p.add_argument("--data")
    _attack_flags(p)
    p.add_argument("--out")

    p = sub.add_parser("transfer", help="cross-model transfer matrix")
    p.add_argument("--models", nargs="+")
    p.add_argument("--data")
    _attack_flags(p)
    p.add_argument("--out", help="CSV path")

    p = sub.add_parser("interpret", help="sensitivity masks for successful attacks")
    p.add_argument("--model")
    p.add_argument("--attack-dir")
    p.add_argument("--data")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--out")

    p = sub.add_parser("report", help="merge and print report files")
    p.add_argument("--inputs", nargs="+")
    p.add_argument("--out")

    for sp in sub.choices.values():
        sp.add_argument("--config", help="JSON file with defaults for this subcommand")
    return parser


def effective_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[args.command])
    if args.command in ("attack", "transfer"):
        cfg.update(ATTACK_DEFAULTS)
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key in cfg and val is not None:
            cfg[key] = val
    if "attack" in cfg and cfg["attack"] not in atk.ATTACKS:
        raise UsageError(f"unknown attack {cfg['attack']!r}; choose from {sorted(atk.ATTACKS)}")
    missing = [k for k in ("out", "data", "model", "models", "attack_dir", "inputs")
               if k in cfg and cfg[k] is None and not (k == "data" and args.command == "interpret")]
    if missing:
        raise UsageError(f"missing required settings: {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


def attack_config(cfg: dict):
    if cfg["attack"] == "advsbf":
        return atk.AttackConfig(grid_size=cfg["grid"], degree=cfg["degree"], d0=cfg["d0"],
                                lambda_a=cfg["lambda_a"], lambda_theta=cfg["lambda_theta"],
                                eps_a=cfg["eps_a"], eps_theta=cfg["eps_theta"], iterations=cfg["iters"],
                                floor=cfg["floor"], ridge=cfg["ridge"])
    return atk.NoiseAttackConfig(epsilon=cfg["eps"], iterations=cfg["iters"], step=cfg["step"],
                                 momentum=cfg["momentum"], floor=cfg["floor"])


def _write_config(cfg: dict, path: Path) -> None:
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _limited(ds, model, limit):
    keep = eh.eligible(model, ds.images, ds.labels)
    if limit is not None:
        keep = keep[:limit]
    return [ds.images[i] for i in keep], [ds.labels[i] for i in keep], keep


def cmd_synth_data(cfg: dict) -> None:
    out = Path(cfg["out"])
    ds = synth_dataset(cfg["seed"], cfg["n_per_class"])
    save_dataset(ds, out)
    _write_config(cfg, out / "config.json")
    print(f"wrote {len(ds)} images to {out}")


def cmd_train(cfg: dict) -> None:
    data = Path(cfg["data"])
    if not (data / "labels.csv").exists():
        raise FileNotFoundError(f"no dataset at {data}")
    ds = load_dataset(data)
    test = load_dataset(cfg["test_data"]) if cfg["test_data"] else synth_dataset(cfg["test_seed"], cfg["test_n"])
    model = train(ds, cfg["epochs"], cfg["lr"], cfg["seed"], hidden_dim=cfg["hidden"])
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    _write_config(cfg, out.with_suffix(".config.json"))
    print(f"train_accuracy {accuracy(model, ds):.4f}")
    print(f"test_accuracy {accuracy(model, test):.4f}")


def cmd_attack(cfg: dict) -> None:
    model = MlpClassifier.load(cfg["model"])
    ds = load_dataset(cfg["data"])
    acfg = attack_config(cfg)
    fn = atk.ATTACKS[cfg["attack"]]
    images, labels, keep = _limited(ds, model, cfg["limit"])
    if not images:
        raise RuntimeError("no correctly classified images to attack")
    stats = eh.run_whitebox(model, images, labels, fn, acfg, attack_name=cfg["attack"],
                            model_id=Path(cfg["model"]).stem)
    stats.n_excluded = len(ds) - len(images)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    traces = []
    for k, r in zip(keep, stats.results):
        tag = f"{k:05d}"
        save_pgm(r.adversarial_image, out / f"adv_{tag}.pgm")
        save_bias_pgm(LogBiasField(r.log_bias), out / f"bias_{tag}.pgm")
        rec = {"index": k, "label": r.label, "success": r.success, "prediction": r.final_prediction,
               "best_iteration": r.best_iteration, "tv_of_bias": r.tv_of_bias, "loss_trace": r.loss_trace,
               "params": r.params.to_dict() if r.params is not None else None}
        (out / f"result_{tag}.json").write_text(json.dumps(rec, indent=1))
        traces.append([k] + [repr(v) for v in r.loss_trace])
    with open(out / "loss_traces.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(traces)
    eh.emit_report(stats, out / "report.csv")
    _write_config(cfg, out / "config.json")
    print(f"{cfg['attack']}: success {stats.successes}/{stats.n_images} "
          f"rate {stats.whitebox_success_rate:.4f} mean_tv {stats.mean_bias_tv:.4f}")


def cmd_transfer(cfg: dict) -> None:
    paths = [Path(p) for p in cfg["models"]]
    if len(paths) < 2:
        raise UsageError("transfer needs at least two models")
    ids = [p.stem for p in paths]
    if len(set(ids)) != len(ids):
        raise UsageError("model file stems must be unique")
    models = {i: MlpClassifier.load(p) for i, p in zip(ids, paths)}
    ds = load_dataset(cfg["data"])
    acfg = attack_config(cfg)
    fn = atk.ATTACKS[cfg["attack"]]
    matrices = []
    for sid, src in models.items():
        images, labels, _ = _limited(ds, src, cfg["limit"])
        matrices.append(eh.run_transfer(src, models, images, labels, fn, acfg, source_id=sid,
                                        attack_name=cfg["attack"]))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    eh.emit_report(matrices, out)
    _write_config(cfg, out.with_suffix(".config.json"))
    for m in matrices:
        for row in m.rows():
            print(",".join(str(v) for v in row))


def cmd_interpret(cfg: dict) -> None:
    adir = Path(cfg["attack_dir"])
    acfg = json.loads((adir / "config.json").read_text())
    model = MlpClassifier.load(cfg["model"])
    ds = load_dataset(cfg["data"] or acfg["data"])
    out = Path(cfg["out"])
    maps, skipped = [], 0
    for rpath in sorted(adir.glob("result_*.json")):
        rec = json.loads(rpath.read_text())
        if not rec["success"]:
            continue
        tag = rpath.stem.split("_", 1)[1]
        x = ds.images[rec["index"]]
        x_adv = load_pgm(adir / f"adv_{tag}.pgm")
        try:
            mp = itp.optimize_map(model, x, x_adv, rec["label"], cfg["iterations"],
                                  cfg["lambda1"], cfg["lambda2"], cfg["step"])
        except ValueError:
            # quantization to 8 bits undid the flip
            skipped += 1
            continue
        out.mkdir(parents=True, exist_ok=True)
        itp.save_map(mp, out / f"map_{tag}.pgm")
        save_pgm(itp.overlay(mp, x), out / f"overlay_{tag}.pgm")
        maps.append((mp, x))
    if not maps:
        raise RuntimeError("no successful adversarial examples to interpret")
    mean = itp.average_maps([m for m, _ in maps])
    save_pgm(GrayImage(mean.mask), out / "mean_map.pgm")
    _write_config(cfg, out / "config.json")
    print(f"interpreted {len(maps)} examples ({skipped} lost their flip after quantization)")


def cmd_report(cfg: dict) -> None:
    items = []
    for p in cfg["inputs"]:
        items.extend(eh.load_report(p))
    eh.emit_report(items, cfg["out"])
    print(",".join(eh.CSV_HEADER))
    for it in items:
        for row in it.rows():
            print(",".join(str(v) for v in row))


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "transfer": cmd_transfer,
    "interpret": cmd_interpret,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"advbias: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"advbias: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
