"""Command-line entry point: ``hdnn <subcommand>``.

Exit codes: 0 success, 1 usage or config error, 2 data error,
3 verification failure.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass

from hdnn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from hdnn.data import (
    DataFormatError,
    generate_synthetic,
    generate_train_valid,
    read_dataset,
    splice,
    spliced_dim,
    write_dataset,
)
from hdnn.linalg import ShapeError
from hdnn.model import (
    ACTIVATIONS,
    CARRY_MODES,
    LAYER_KINDS,
    TRANSFORM_MODES,
    ArchError,
    ArchSpec,
    count_params,
)
from hdnn.training import TrainConfig, evaluate, run_training, write_log
from hdnn.verification import grad_check

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("hdnn")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    train_data: str = None
    valid_data: str = None
    output_dir: str = "run"
    context: int = 3
    input_dim: int = None
    output_dim: int = None
    hidden_dim: int = 32
    num_hidden_layers: int = 8
    layer_kind: str = "highway"
    transform_mode: str = "learned"
    carry_mode: str = "learned"
    activation: str = "sigmoid"
    dropout_rate: float = 0.0
    residual_span: int = 1
    learning_rate: float = 0.1
    momentum_after_first_epoch: float = 0.9
    batch_size: int = 128
    num_epochs: int = 20
    seed: int = 0
    lr_halving: str = "off"
    init_checkpoint: str = None

    def arch(self):
        return ArchSpec(
            input_dim=self.input_dim,
            hidden_dim=self.hidden_dim,
            num_hidden_layers=self.num_hidden_layers,
            output_dim=self.output_dim,
            layer_kind=self.layer_kind,
            transform_mode=self.transform_mode,
            carry_mode=self.carry_mode,
            activation=self.activation,
            dropout_rate=self.dropout_rate,
            residual_span=self.residual_span,
        )

    def train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum_after_first_epoch=self.momentum_after_first_epoch,
            batch_size=self.batch_size,
            num_epochs=self.num_epochs,
            seed=self.seed,
            lr_halving=self.lr_halving,
        )


_INT_KEYS = {"context", "input_dim", "output_dim", "hidden_dim", "num_hidden_layers",
             "residual_span", "batch_size", "num_epochs", "seed"}
_FLOAT_KEYS = {"dropout_rate", "learning_rate", "momentum_after_first_epoch"}
_PATH_KEYS = {"train_data", "valid_data", "output_dir", "init_checkpoint"}


def parse_run_config(doc, base_dir="."):
    """Validate a config mapping. Relative paths resolve against ``base_dir``."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = {}
    for key, value in doc.items():
        if value is None:
            values[key] = None
        elif key in _INT_KEYS:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
            values[key] = value
        elif key in _FLOAT_KEYS:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{key}: expected a number, got {value!r}")
            values[key] = float(value)
        else:
            if not isinstance(value, str):
                raise ConfigError(f"{key}: expected a string, got {value!r}")
            if key in _PATH_KEYS:
                value = os.path.abspath(os.path.join(base_dir, value))
            values[key] = value
    cfg = RunConfig(**values)
    if cfg.context < 0:
        raise ConfigError(f"context: must be non-negative, got {cfg.context}")
    return cfg


def load_run_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_run_config(doc, os.path.dirname(os.path.abspath(path)))


def _resolve_dims(cfg, train):
    """Fill input/output dims from the training data, or check them against it."""
    derived = {
        "input_dim": spliced_dim(train.feat_dim, cfg.context),
        "output_dim": train.num_classes,
    }
    for key, value in derived.items():
        given = getattr(cfg, key)
        if given is not None and given != value:
            raise ShapeError(f"{key}: config says {given}, training data implies {value}")
    return dataclasses.replace(cfg, **derived)


def _check_against_checkpoint(arch, ckpt_arch):
    for f in dataclasses.fields(ArchSpec):
        mine, theirs = getattr(arch, f.name), getattr(ckpt_arch, f.name)
        if mine != theirs:
            raise ShapeError(f"{f.name}: config has {mine}, checkpoint has {theirs}")


# --------------------------------------------------------------------------
# Subcommands


def cmd_generate_data(args):
    if args.classes < 2:
        raise ConfigError(f"--classes must be at least 2, got {args.classes}")
    if args.frames < 1 or args.dim < 1:
        raise ConfigError("--frames and --dim must be positive")
    if args.mean_dur < 1.0 or args.noise < 0.0:
        raise ConfigError("--mean-dur must be >= 1 and --noise >= 0")
    if (args.valid_out is None) != (args.valid_frames is None):
        raise ConfigError("--valid-out and --valid-frames go together")
    if args.valid_out is None:
        sets = [(args.out, generate_synthetic(
            args.classes, args.dim, args.frames, args.mean_dur, args.noise, args.seed))]
    else:
        if args.valid_frames < 1:
            raise ConfigError("--valid-frames must be positive")
        train, valid = generate_train_valid(
            args.classes, args.dim, args.frames, args.valid_frames, args.mean_dur, args.noise, args.seed)
        sets = [(args.out, train), (args.valid_out, valid)]
    for path, ds in sets:
        write_dataset(path, ds)
        print(f"{path}: frames={ds.num_frames} classes={ds.num_classes} "
              f"dim={ds.feat_dim} segments={len(ds.segments)}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_run_config(args.config)
    if cfg.train_data is None or cfg.valid_data is None:
        raise ConfigError("train_data and valid_data are required")
    train = read_dataset(cfg.train_data)
    valid = read_dataset(cfg.valid_data)
    cfg = _resolve_dims(cfg, train)
    try:
        arch = cfg.arch()
        tcfg = cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if valid.feat_dim != train.feat_dim or valid.num_classes != train.num_classes:
        raise ShapeError(
            f"valid data is {valid.feat_dim}-dim/{valid.num_classes} classes, "
            f"train data is {train.feat_dim}-dim/{train.num_classes} classes"
        )
    params = None
    if cfg.init_checkpoint is not None:
        ckpt_arch, params = load_checkpoint(cfg.init_checkpoint)
        _check_against_checkpoint(arch, ckpt_arch)

    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "resolved_config.json"), "w") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2)
        fh.write("\n")

    train_xy = (splice(train, cfg.context), train.labels)
    valid_xy = (splice(valid, cfg.context), valid.labels)
    print("epoch,train_ce,valid_ce,valid_fer,seconds")
    reports, params = run_training(
        arch, train_xy, valid_xy, tcfg, params=params,
        on_epoch=lambda r: print(r.csv_row(), flush=True),
    )
    write_log(os.path.join(cfg.output_dir, "log.csv"), reports)
    save_checkpoint(os.path.join(cfg.output_dir, "final.hwnn"), arch, params)
    return EXIT_OK


def _infer_context(arch, feat_dim):
    width, rem = divmod(arch.input_dim, feat_dim)
    if rem or width % 2 == 0:
        raise ShapeError(
            f"model input_dim {arch.input_dim} is not an odd multiple of feature dim {feat_dim}"
        )
    return (width - 1) // 2


def cmd_eval(args):
    arch, params = load_checkpoint(args.model)
    ds = read_dataset(args.data)
    if ds.num_frames == 0:
        raise DataFormatError(f"{args.data}: dataset is empty")
    context = _infer_context(arch, ds.feat_dim) if args.context is None else args.context
    if spliced_dim(ds.feat_dim, context) != arch.input_dim:
        raise ShapeError(
            f"spliced dim {spliced_dim(ds.feat_dim, context)} != model input_dim {arch.input_dim}"
        )
    if ds.num_classes > arch.output_dim:
        raise ShapeError(f"dataset has {ds.num_classes} classes, model outputs {arch.output_dim}")
    ce, fer = evaluate(params, arch, splice(ds, context), ds.labels)
    print(f"ce={ce:.6f} fer={fer:.6f}")
    return EXIT_OK


def _arch_from_flags(args):
    return ArchSpec(
        input_dim=args.input_dim,
        hidden_dim=args.hidden_dim,
        num_hidden_layers=args.layers,
        output_dim=args.output_dim,
        layer_kind=args.layer_kind,
        transform_mode=args.transform,
        carry_mode=args.carry,
        activation=args.activation,
        residual_span=args.residual_span,
    )


def cmd_count_params(args):
    if args.config is not None:
        cfg = load_run_config(args.config)
        if cfg.input_dim is None or cfg.output_dim is None:
            if cfg.train_data is None:
                raise ConfigError("input_dim/output_dim missing and no train_data to derive them")
            cfg = _resolve_dims(cfg, read_dataset(cfg.train_data))
        arch = cfg.arch()
    else:
        arch = _arch_from_flags(args)
    total = count_params(arch)
    print(f"{total} ({total / 1e6:.2f}M)")
    return EXIT_OK


def cmd_grad_check(args):
    arch = _arch_from_flags(args)
    report = grad_check(arch, args.seed, args.tol, batch_size=args.batch_size, eps=args.eps)
    print(report)
    return EXIT_OK if report.passed else EXIT_VERIFY


def _add_arch_flags(p, input_dim, hidden_dim, layers, output_dim):
    p.add_argument("--input-dim", type=int, default=input_dim)
    p.add_argument("--hidden-dim", type=int, default=hidden_dim)
    p.add_argument("--layers", type=int, default=layers, help="number of hidden layers")
    p.add_argument("--output-dim", type=int, default=output_dim)
    p.add_argument("--layer-kind", choices=LAYER_KINDS, default="highway")
    p.add_argument("--transform", choices=TRANSFORM_MODES, default="learned")
    p.add_argument("--carry", choices=CARRY_MODES, default="learned")
    p.add_argument("--activation", choices=ACTIVATIONS, default="sigmoid")
    p.add_argument("--residual-span", type=int, choices=(1, 2), default=1)


def build_parser():
    parser = _Parser(prog="hdnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-data", help="write a synthetic FDS1 dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--mean-dur", type=float, default=10.0)
    p.add_argument("--valid-out", help="also write a validation set sharing the class prototypes")
    p.add_argument("--valid-frames", type=int)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="frame CE and FER of a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--context", type=int, help="splice context (default: inferred)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count-params", help="exact trainable parameter count")
    p.add_argument("--config")
    _add_arch_flags(p, input_dim=600, hidden_dim=1024, layers=10, output_dim=3972)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("grad-check", help="compare backprop with finite differences")
    _add_arch_flags(p, input_dim=5, hidden_dim=6, layers=4, output_dim=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=3)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, ArchError) as exc:
        print(f"hdnn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, CheckpointError, ShapeError) as exc:
        print(f"hdnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"hdnn: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
