"""Command-line entry point: train | evaluate | fetch-data.

Train flags mirror TrainConfig one-to-one.  Precedence, lowest to highest:
built-in defaults, then key=value pairs from --config, then explicit flags.
Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure
(each with a one-line diagnostic on stderr).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import data, experiment
from .errors import ConfigError, MarginCnnError


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _drop_prob(text: str) -> float:
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1), got {text}")
    return v


# (flag, dest, kwargs) for every TrainConfig field; defaults shown in help
# come from the dataclass, while argparse itself suppresses values so that
# --config can sit between defaults and explicit flags.
_TRAIN_FLAGS = [
    ("--dataset", dict(choices=data.DATASETS, help="dataset to train on")),
    ("--head", dict(choices=tuple(experiment.HEAD_ALIASES), help="loss head (svm is an alias for l2svm)")),
    ("--batch-size", dict(type=_positive_int, help="minibatch size")),
    ("--dropout-p", dict(type=_drop_prob, help="drop probability for the fc1 activations")),
    ("--learning-rate", dict(type=_positive_float, help="Adam step size")),
    ("--steps", dict(type=_nonneg_int, help="number of optimizer steps")),
    ("--svm-c", dict(type=_positive_float, help="SVM penalty C (ignored by the softmax head)")),
    ("--seed", dict(type=int, help="experiment seed; feeds init, shuffle and dropout streams")),
    ("--input-extent", dict(type=int, choices=(28, 32), help="input edge length; 32 zero-pads the stored 28")),
    ("--pool-stride", dict(type=int, choices=(1, 2), help="stride of both max-pool layers")),
    ("--log-every", dict(type=_positive_int, help="record metrics every N steps")),
    ("--out-dir", dict(help="run output directory (default runs/<dataset>-<head>)")),
    ("--data-dir", dict(help="dataset directory (default $MARGINCNN_DATA or ./data)")),
    ("--raw-pixels", dict(action="store_true", help="keep 0..255 pixel values instead of u/255")),
    ("--conv1-filters", dict(type=_positive_int, help="filters in the first convolution")),
    ("--conv2-filters", dict(type=_positive_int, help="filters in the second convolution")),
    ("--fc-units", dict(type=_positive_int, help="width of the hidden dense layer")),
    ("--train-subset", dict(type=_positive_int, help="train on only the first N samples")),
]

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(experiment.TrainConfig)}


def _parse_config_value(key: str, text: str):
    ftype = _FIELD_TYPES[key]
    text = text.strip()
    if ftype == "bool":
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key}: expected a boolean, got {text!r}")
    if ftype == "int":
        return int(text)
    if ftype == "float":
        return float(text)
    if ftype == "int | None":
        return None if text.lower() in ("none", "") else int(text)
    return text  # str and str | None


def _read_config_file(path: str) -> dict:
    overrides = {}
    for raw_line in Path(path).read_text().splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}: unknown config key {key!r}")
        try:
            overrides[key] = _parse_config_value(key, value)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{path}: bad value for {key}: {e}") from e
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="margincnn",
        description="Train and evaluate a small CNN with softmax or SVM heads on MNIST-family data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    defaults = experiment.TrainConfig()
    p_train = sub.add_parser("train", help="train a model and write metrics, plots and a model file")
    p_train.add_argument("--config", help="key=value file applied before explicit flags")
    p_train.add_argument("--no-plots", action="store_true", help="skip rendering curves.svg/png")
    for flag, kwargs in _TRAIN_FLAGS:
        dest = flag.lstrip("-").replace("-", "_")
        shown = getattr(defaults, dest)
        kwargs = dict(kwargs)
        kwargs["help"] = f"{kwargs['help']} (default: {shown})"
        if kwargs.get("action") == "store_true":
            kwargs["default"] = argparse.SUPPRESS
            p_train.add_argument(flag, **kwargs)
        else:
            p_train.add_argument(flag, default=argparse.SUPPRESS, **kwargs)

    p_eval = sub.add_parser("evaluate", help="evaluate a saved model on a dataset split")
    p_eval.add_argument("--model-file", required=True, help="model container written by train")
    p_eval.add_argument("--dataset", choices=data.DATASETS, default="mnist")
    p_eval.add_argument("--split", choices=("train", "test"), default="test")
    p_eval.add_argument("--batch-size", type=_positive_int, default=256)
    p_eval.add_argument("--data-dir", default=None, help="dataset directory (default $MARGINCNN_DATA or ./data)")
    p_eval.add_argument("--raw-pixels", action="store_true")

    p_fetch = sub.add_parser("fetch-data", help="download dataset files with checksum verification")
    p_fetch.add_argument("--dataset", choices=data.DATASETS + ("all",), default="all")
    p_fetch.add_argument("--data-dir", default=None)
    p_fetch.add_argument("--base-url", default=None, help="override the download URL prefix")
    p_fetch.add_argument("--checksums", default=None, help="sha256sum-style manifest to verify downloads against")
    p_fetch.add_argument("--overwrite", action="store_true", help="re-download files that already exist")
    return parser


def _cmd_train(args: argparse.Namespace) -> int:
    merged = {}
    if args.config:
        merged.update(_read_config_file(args.config))
    explicit = {
        k: v for k, v in vars(args).items() if k in _FIELD_TYPES
    }
    merged.update(explicit)
    cfg = experiment.TrainConfig(**merged)
    if "svm_c" in merged and cfg.head_kind is experiment.HeadKind.SOFTMAX_CE:
        print("warning: --svm-c is ignored by the softmax head", file=sys.stderr)

    out_dir = Path(cfg.out_dir) if cfg.out_dir else Path("runs") / f"{cfg.dataset}-{cfg.head}"

    def show(rec: experiment.MetricRecord) -> None:
        print(
            f"step {rec.step:>6}  acc {rec.train_accuracy:.4f}  "
            f"loss {rec.loss_total:.6g}  ({rec.wall_ms / 1000.0:.1f}s)",
            flush=True,
        )

    model, records = experiment.run_train(cfg, progress=show)
    test = data.load_split(
        data.resolve_data_dir(cfg.data_dir), cfg.dataset, "test", raw_pixels=cfg.raw_pixels
    )
    test = data.pad_images(test, cfg.input_extent)
    test_accuracy = experiment.evaluate(model, test, batch_size=cfg.batch_size)
    summary = experiment.summarize(records, cfg, test_accuracy=test_accuracy)
    experiment.write_metrics(records, summary, out_dir, plots=not args.no_plots)
    model_path = out_dir / "model.bin"
    experiment.save_model(model, model_path)
    if summary.mean_train_accuracy is not None:
        print(f"mean train accuracy {summary.mean_train_accuracy:.6f}")
        print(f"mean train loss     {summary.mean_train_loss:.9g}")
    print(f"test accuracy       {test_accuracy:.4f}")
    print(f"outputs under {out_dir}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    model = experiment.load_model(args.model_file)
    split = data.load_split(
        data.resolve_data_dir(args.data_dir), args.dataset, args.split, raw_pixels=args.raw_pixels
    )
    split = data.pad_images(split, model.input_extent)
    acc = experiment.evaluate(model, split, batch_size=args.batch_size)
    print(f"{args.dataset} {args.split} accuracy {acc:.4f}")
    return 0


def _cmd_fetch(args: argparse.Namespace) -> int:
    names = data.DATASETS if args.dataset == "all" else (args.dataset,)
    if args.base_url and len(names) > 1:
        raise ConfigError("--base-url needs a single --dataset")
    checksums = None
    if args.checksums:
        checksums = data.parse_sha256_manifest(Path(args.checksums).read_text())
    data_dir = data.resolve_data_dir(args.data_dir)
    for name in names:
        written = data.fetch_dataset(
            data_dir, name, base_url=args.base_url, checksums=checksums, overwrite=args.overwrite
        )
        for path in written:
            print(path)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": _cmd_train, "evaluate": _cmd_evaluate, "fetch-data": _cmd_fetch}
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except MarginCnnError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
