"""Command-line entry point.

Subcommands: train, eval, profile, export-attn, synth. Configuration is
resolved as built-in defaults < `--config` key=value file < command-line
flags; unknown keys in the config file are a hard error. Exit codes:
0 success, 2 configuration/usage, 3 data, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .attention import AttentionConfig
from .data import (
    AugmentationConfig,
    default_partition,
    load_manifest,
    parse_sequence,
    resolve_partition,
    uniform_sample,
)
from .errors import ConfigError, DataError, HanError, UsageError
from .model import HANConfig, HANModel, SITES, extract_attention, load_checkpoint, save_checkpoint
from .profile import cost_report
from .synth import SynthConfig, generate_dataset
from .train import TrainConfig, evaluate, train, write_confusion_csv, write_training_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

# every key the config file may set; type is used both for parsing and
# for the mirrored --kebab-case flag
_CONFIG_KEYS: dict[str, type] = {
    "d_model": int,
    "heads": int,
    "d_head": int,
    "dropout": float,
    "frames": int,
    "classes": int,
    "joints": int,
    "partition": str,
    "pe_j": bool,
    "pe_f": bool,
    "pe_t": bool,
    "pe_fusion": bool,
    "share_j_att": bool,
    "share_t_att": bool,
    "lr": float,
    "batch_size": int,
    "warmup_epochs": int,
    "plateau_patience": int,
    "decay_factor": float,
    "max_decays": int,
    "max_epochs": int,
    "augment": bool,
    "scale_min": float,
    "scale_max": float,
    "shift_range": float,
    "time_jitter": float,
    "noise_std": float,
    "seed": int,
}

_DEFAULTS: dict = {
    "d_model": 128,
    "heads": 8,
    "d_head": 32,
    "dropout": 0.1,
    "frames": 8,
    "classes": 14,
    "joints": 22,
    "partition": "auto",
    "pe_j": True,
    "pe_f": True,
    "pe_t": True,
    "pe_fusion": True,
    "share_j_att": True,
    "share_t_att": True,
    "lr": 0.001,
    "batch_size": 32,
    "warmup_epochs": 5,
    "plateau_patience": 10,
    "decay_factor": 10.0,
    "max_decays": 4,
    "max_epochs": None,
    "augment": True,
    "scale_min": 0.9,
    "scale_max": 1.1,
    "shift_range": 0.05,
    "time_jitter": 0.5,
    "noise_std": 0.001,
    "seed": 0,
}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "on", "yes"):
        return True
    if lowered in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"expected a boolean, got '{text}'")


def _read_config_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    out: dict = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, value = text.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        kind = _CONFIG_KEYS[key]
        try:
            out[key] = _parse_bool(value) if kind is bool else kind(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for '{key}': {value}") from exc
    return out


class RunConfig:
    """Merged configuration with provenance: defaults < file < flags."""

    def __init__(self, args: argparse.Namespace):
        self.values = dict(_DEFAULTS)
        self.explicit: set[str] = set()
        config_path = getattr(args, "config", None)
        if config_path:
            for key, value in _read_config_file(config_path).items():
                self.values[key] = value
                self.explicit.add(key)
        for key in _CONFIG_KEYS:
            flag_value = getattr(args, key, None)
            if flag_value is not None:
                self.values[key] = flag_value
                self.explicit.add(key)

    def __getitem__(self, key: str):
        return self.values[key]

    def was_set(self, key: str) -> bool:
        return key in self.explicit

    def require_consistent(self, key: str, observed, source: str) -> None:
        if self.was_set(key) and self.values[key] != observed:
            raise ConfigError(
                f"config sets {key}={self.values[key]} but {source} declares {observed}"
            )
        self.values[key] = observed

    def han_config(self) -> HANConfig:
        if self.values["partition"] == "auto":
            partition = default_partition(self.values["joints"])
        else:
            partition = resolve_partition(self.values["partition"])
        return HANConfig(
            attention=AttentionConfig(
                d_model=self.values["d_model"],
                n_heads=self.values["heads"],
                d_head=self.values["d_head"],
                dropout_rate=self.values["dropout"],
            ),
            frames=self.values["frames"],
            class_count=self.values["classes"],
            partition=partition,
            pe_j=self.values["pe_j"],
            pe_f=self.values["pe_f"],
            pe_t=self.values["pe_t"],
            pe_fusion=self.values["pe_fusion"],
            share_j_att=self.values["share_j_att"],
            share_t_att=self.values["share_t_att"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr_init=self.values["lr"],
            batch_size=self.values["batch_size"],
            warmup_epochs=self.values["warmup_epochs"],
            plateau_patience=self.values["plateau_patience"],
            decay_factor=self.values["decay_factor"],
            max_decays=self.values["max_decays"],
            seed=self.values["seed"],
            max_epochs=self.values["max_epochs"],
            augmentation=self.augmentation_config(),
        )

    def augmentation_config(self) -> AugmentationConfig | None:
        if not self.values["augment"]:
            return None
        return AugmentationConfig(
            scale_range=(self.values["scale_min"], self.values["scale_max"]),
            shift_range=self.values["shift_range"],
            time_jitter=self.values["time_jitter"],
            noise_std=self.values["noise_std"],
        )


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value configuration file")
    for key, kind in _CONFIG_KEYS.items():
        flag = "--" + key.replace("_", "-")
        if kind is bool:
            parser.add_argument(flag, dest=key, default=None, action=argparse.BooleanOptionalAction)
        else:
            parser.add_argument(flag, dest=key, type=kind, default=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="han", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a manifest")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--out", required=True, help="output directory for checkpoint and log")
    _add_config_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--split", default="test", choices=("train", "test"))
    p_eval.add_argument("--confusion", help="write the confusion matrix CSV here")

    p_prof = sub.add_parser("profile", help="parameter and FLOP report for a configuration")
    p_prof.add_argument("--csv", help="write the breakdown CSV here")
    _add_config_flags(p_prof)

    p_attn = sub.add_parser("export-attn", help="export attention matrices for one sequence")
    p_attn.add_argument("--checkpoint", required=True)
    p_attn.add_argument("--sequence", required=True, help="sequence file")
    p_attn.add_argument("--site", required=True)
    p_attn.add_argument("--frame", type=int)
    p_attn.add_argument("--part", type=int)
    p_attn.add_argument("--stream", type=int)
    p_attn.add_argument("--out", required=True, help="output directory for the CSV files")

    p_synth = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--classes", type=int, default=4)
    p_synth.add_argument("--per-class", dest="per_class", type=int, default=16)
    p_synth.add_argument("--joints", type=int, default=22)
    p_synth.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.25)
    p_synth.add_argument("--min-frames", dest="min_frames", type=int, default=20)
    p_synth.add_argument("--max-frames", dest="max_frames", type=int, default=40)
    p_synth.add_argument("--seed", type=int, default=0)
    return parser


def cmd_train(args: argparse.Namespace) -> int:
    run = RunConfig(args)
    dataset = load_manifest(args.manifest)
    run.require_consistent("classes", dataset.class_count, "the manifest")
    run.require_consistent("joints", dataset.joint_count, "the manifest")
    config = run.han_config()
    if run["partition"] == "auto":
        config = dataclasses.replace(config, partition=dataset.partition)
    model = HANModel(config, seed=run["seed"])
    result = train(dataset, model, run.train_config())
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(result.model, os.path.join(args.out, "model.ckpt"))
    write_training_log(os.path.join(args.out, "train.log"), result)
    print(f"epochs={len(result.epochs)} train_acc={result.final_train_acc:.4f} "
          f"val_acc={result.final_val_acc:.4f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = load_manifest(args.manifest)
    if dataset.class_count != model.config.class_count:
        raise ConfigError(
            f"checkpoint was trained for {model.config.class_count} classes, "
            f"manifest declares {dataset.class_count}"
        )
    if dataset.joint_count != model.config.joint_count:
        raise ConfigError(
            f"checkpoint expects {model.config.joint_count} joints, manifest declares {dataset.joint_count}"
        )
    sequences = dataset.load_split(args.split)
    if not sequences:
        raise DataError(f"manifest has no '{args.split}' entries")
    report = evaluate(model, sequences)
    if args.confusion:
        write_confusion_csv(args.confusion, report)
    print(f"accuracy={report.accuracy:.8g} samples={int(report.confusion.sum())}")
    return EXIT_OK


def cmd_profile(args: argparse.Namespace) -> int:
    run = RunConfig(args)
    report = cost_report(run.han_config())
    print(report.text())
    print(f"params={report.param_total}")
    print(f"flops={report.flop_total}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.csv())
    return EXIT_OK


def cmd_export_attn(args: argparse.Namespace) -> int:
    if args.site not in SITES:
        raise UsageError(f"--site must be one of {', '.join(SITES)}; got '{args.site}'")
    model = load_checkpoint(args.checkpoint)
    seq = parse_sequence(args.sequence, model.config.joint_count)
    seq = uniform_sample(seq, model.config.frames)
    maps = extract_attention(
        seq, model, args.site, frame=args.frame, part=args.part, stream=args.stream
    )
    os.makedirs(args.out, exist_ok=True)

    def write_matrix(name: str, matrix: np.ndarray) -> None:
        path = os.path.join(args.out, name)
        with open(path, "w", encoding="utf-8") as fh:
            for row in np.atleast_2d(matrix):
                fh.write(",".join(format(float(v), ".9g") for v in row) + "\n")

    write_matrix("head_avg.csv", maps.head_avg)
    for h in range(maps.per_head.shape[0]):
        write_matrix(f"head_{h:02d}.csv", maps.per_head[h])
    if maps.frame_sums is not None:
        write_matrix("frame_sums.csv", maps.frame_sums)
    print(f"site={args.site} tokens={maps.head_avg.shape[0]} heads={maps.per_head.shape[0]} out={args.out}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    config = SynthConfig(
        classes=args.classes,
        per_class=args.per_class,
        joints=args.joints,
        test_fraction=args.test_fraction,
        min_frames=args.min_frames,
        max_frames=args.max_frames,
        seed=args.seed,
    )
    manifest = generate_dataset(config, args.out)
    print(f"manifest={manifest} classes={config.classes} sequences={config.classes * config.per_class}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "profile": cmd_profile,
    "export-attn": cmd_export_attn,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed the message; normalize its code
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except HanError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
