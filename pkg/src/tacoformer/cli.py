"""Command-line surface.

Subcommands: preprocess, synth, train, eval, ablate, gradcheck,
export-attn. Configuration comes from an optional JSON file (flat keys
mirroring TrainConfig plus the model dims d/heads/layers/ffn_hidden) with
repeatable --set key=value overrides; unknown keys are rejected and the
effective config is echoed before running.

Exit codes: 0 success, 1 I/O failure, 2 malformed input/config, 3 failed check.
"""

import argparse
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .fusion import FUSION_MODES, build_fusion_report, export_attention
from .gradcheck import finite_diff_check
from .model import ModelConfig, batch_loss, init_model_params
from .preprocess import (InstanceSet, PipelineError, default_channel_map,
                         load_channel_map, run_pipeline)
from .pstb import PstbError
from .synth import COUPLINGS, synth_generate
from .tensor import Tensor
from .trainer import (TrainConfig, evaluate, load_checkpoint, model_config_for,
                      run_ablation, save_checkpoint, train)
from .encoder import encode

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_CHECK = 3

_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}
_MODEL_KEYS = {"d": int, "heads": int, "layers": int, "ffn_hidden": int}


class ConfigError(ValueError):
    pass


def _coerce(key, value):
    if key in _MODEL_KEYS:
        return int(value)
    target = _TRAIN_KEYS[key]
    if target in (float, "float"):
        return float(value)
    if target in (int, "int"):
        return int(value)
    if target in (bool, "bool"):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes"):
            return True
        if str(value).lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: cannot parse {value!r} as a boolean")
    return str(value)


def load_config(path, overrides):
    """Merge config file and --set overrides into a validated flat dict."""
    cfg = {}
    if path:
        try:
            cfg = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key.strip()] = value.strip()
    known = set(_TRAIN_KEYS) | set(_MODEL_KEYS)
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return {k: _coerce(k, v) for k, v in cfg.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def _train_config(cfg) -> TrainConfig:
    try:
        return TrainConfig(**{k: v for k, v in cfg.items() if k in _TRAIN_KEYS})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _model_kwargs(cfg) -> dict:
    return {k: v for k, v in cfg.items() if k in _MODEL_KEYS}


def _echo_config(cfg: TrainConfig, model_kwargs, extra=None):
    effective = {**cfg.__dict__, **model_kwargs, **(extra or {})}
    print("config: " + json.dumps(effective, sort_keys=True), file=sys.stderr)


# ------------------------------------------------------------ subcommands ----


def cmd_preprocess(args) -> int:
    grid_map = (load_channel_map(args.map) if args.map
                else default_channel_map(args.dataset))
    instances = run_pipeline(args.in_dir, args.dataset, grid_map, args.task,
                             args.threshold)
    instances.save(args.out)
    print(f"wrote {len(instances)} instances "
          f"({instances.eeg.shape[1]}x{instances.eeg.shape[2]}x{instances.eeg.shape[3]} EEG, "
          f"{instances.pps.shape[1]}x{instances.pps.shape[2]} PPS) to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    instances = synth_generate(args.n, coupling=args.coupling,
                               noise_std=args.noise, seed=args.seed,
                               pps_channels=args.pps_channels)
    instances.save(args.out)
    print(f"wrote {len(instances)} synthetic instances (coupling={args.coupling}, "
          f"noise={args.noise}, seed={args.seed}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    train_cfg = _train_config(cfg)
    mk = _model_kwargs(cfg)
    _echo_config(train_cfg, mk)
    dataset = InstanceSet.load(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_cfg = model_config_for(dataset, train_cfg, **mk)
    params, log = train(dataset, train_cfg, model_cfg,
                        checkpoint_path=out_dir / "checkpoint.pstb",
                        log_path=out_dir / "train_log.jsonl")
    if log:
        final = log[-1]
        (out_dir / "metrics.json").write_text(
            json.dumps(final, sort_keys=True, indent=2) + "\n")
        print(f"epoch {final['epoch']}: train_loss={final['train_loss']:.4f} "
              f"train_acc={final['train_acc']:.4f} test_acc={final['test_acc']:.4f}")
    else:
        save_checkpoint(params, model_cfg, out_dir / "checkpoint.pstb")
        print("no epochs requested; wrote the initial checkpoint")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    train_cfg = _train_config(cfg)
    params, model_cfg = load_checkpoint(args.checkpoint)
    dataset = InstanceSet.load(args.data)
    metrics = evaluate(params, dataset, model_cfg, train_cfg.fusion_mode)
    payload = {"accuracy": metrics["accuracy"], "mean_loss": metrics["mean_loss"],
               "confusion": metrics["confusion"].tolist()}
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.set)
    train_cfg = _train_config(cfg)
    mk = _model_kwargs(cfg)
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    _echo_config(train_cfg, mk, {"seeds": seeds, "workers": args.threads})
    dataset = InstanceSet.load(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()

    def progress(key, acc):
        mode, penc, seed = key
        print(f"  [{time.time() - started:7.1f}s] fusion={mode} posenc={penc} "
              f"seed={seed}: test_acc={acc:.4f}", file=sys.stderr)

    result = run_ablation(dataset, train_cfg, seeds, model_kwargs=mk,
                          workers=args.threads, progress=progress)
    (out_dir / "ablation.csv").write_text(result.to_csv())
    table = result.format_table()
    (out_dir / "ablation.txt").write_text(table)
    print(table)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config, args.set)
    cfg.setdefault("d", 8)
    cfg.setdefault("heads", 2)
    cfg.setdefault("layers", 1)
    train_cfg = _train_config(cfg)
    model_cfg = ModelConfig(d=cfg["d"], heads=cfg["heads"], layers=cfg["layers"],
                            timestamps=8, grid=(3, 3), pps_channels=2,
                            posenc=train_cfg.posenc,
                            ffn_hidden=cfg.get("ffn_hidden", 0))
    rng = np.random.default_rng(train_cfg.seed)
    xe = rng.standard_normal((2, 3, 3, 8))
    xp = rng.standard_normal((2, 2, 8))
    labels = np.array([0, 1])
    params = init_model_params(model_cfg, seed=train_cfg.seed)
    modes = FUSION_MODES if args.mode == "all" else (args.mode,)
    failed = False
    for mode in modes:
        report = finite_diff_check(
            lambda m=mode: batch_loss(xe, xp, labels, params, model_cfg, m),
            params, step=args.step, tol=args.tol)
        print(f"mode {mode}: worst rel err {report.worst:.3e} "
              f"({'pass' if report.passed else 'FAIL'})")
        for line in report.lines():
            print("  " + line)
        failed = failed or not report.passed
    return EXIT_CHECK if failed else EXIT_OK


def cmd_export_attn(args) -> int:
    cfg = load_config(args.config, args.set)
    train_cfg = _train_config(cfg)
    params, model_cfg = load_checkpoint(args.checkpoint)
    dataset = InstanceSet.load(args.data)
    if not 0 <= args.index < len(dataset):
        raise ConfigError(f"--index {args.index} outside the {len(dataset)}-instance set")
    xe = dataset.eeg[args.index]
    xp = dataset.pps[args.index]
    e = encode(Tensor(xe), params.eeg_encoder, model_cfg.eeg())
    p = encode(Tensor(xp), params.pps_encoder, model_cfg.pps())
    report = build_fusion_report(e, p, params.fusion, train_cfg.fusion_mode,
                                 label=int(dataset.labels[args.index]))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = export_attention(report, out_dir)
    for path in written:
        print(path)
    return EXIT_OK


# ----------------------------------------------------------------- parser ----


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tacoformer",
        description="Token-channel compound cross-attention fusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="run a raw-trial pipeline")
    p.add_argument("--dataset", required=True, choices=("deap", "dreamer"))
    p.add_argument("--in", dest="in_dir", required=True,
                   help="directory with per-subject .pstb containers + ratings.csv")
    p.add_argument("--map", help="channel map file (default: bundled map)")
    p.add_argument("--task", required=True, choices=("valence", "arousal"))
    p.add_argument("--threshold", type=float, default=None,
                   help="label threshold (default 5 for deap, 3 for dreamer)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("synth", help="generate a synthetic instance set")
    p.add_argument("--coupling", default="both", choices=COUPLINGS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pps-channels", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    for name, fn in (("train", cmd_train), ("ablate", cmd_ablate)):
        p = sub.add_parser(name)
        p.add_argument("--data", required=True, help="InstanceSet .pstb file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        if name == "ablate":
            p.add_argument("--seeds", default="0,1,2,3,4")
            p.add_argument("--threads", type=int, default=1,
                           help="worker process cap")
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an instance set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", help="also write metrics JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--mode", default="all", choices=("all",) + FUSION_MODES)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("export-attn", help="export fusion attention matrices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_export_attn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags and 0 on --help; pass both through
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError, PipelineError, PstbError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
