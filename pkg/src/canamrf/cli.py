"""Command-line entry point: data generation, training, evaluation, grad check.

Configuration is a flat `key = value` text file with dotted keys ('#' starts a
comment).  Unknown keys are hard errors so typos cannot silently fall back to
defaults.  Every subcommand echoes its effective configuration as
`config.<key>=<value>` records before printing results, so a run can be
reproduced from its own output.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .amrf import MIX_VARIANTS
from .autodiff import Tape, grad_check
from .data import SynthSpec, generate, load_dataset, stratified_split, write_dataset
from .errors import ConfigError, DataError, NumericError, ShapeError
from .model import (
    ModelConfig,
    build_forward,
    focal_loss_node,
    init_model_params,
    load_checkpoint,
    save_checkpoint,
)
from .trainer import TrainConfig, evaluate, history_lines, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

GRAD_CHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through UsageError so
    # the spec'd usage exit code (1) applies instead.
    def error(self, message):
        raise UsageError(message)


# key -> (parser, default). Defaults double as the effective config echo.
def _bool(_: str):
    raise ConfigError("no boolean keys defined")


def _modality_list(raw: str) -> tuple[str, ...]:
    items = tuple(x.strip() for x in raw.split(",") if x.strip())
    return items


CONFIG_SCHEMA: dict[str, tuple] = {
    "amrf.variant": (str, "matrix_literal"),
    "model.d": (int, 8),
    "model.k": (int, 4),
    "model.window": (int, 3),
    "model.hidden": (int, 16),
    "model.gamma": (float, 2.0),
    "train.epochs": (int, 200),
    "train.batch_size": (int, 8),
    "train.lr": (float, 1e-3),
    "train.optimizer": (str, "adam"),
    "train.patience": (int, 20),
    "train.seed": (int, 0),
    "train.threshold": (float, 0.5),
    "gen.n_samples": (int, 300),
    "gen.positive_rate": (float, 0.5),
    "gen.separation": (float, 8.0),
    "gen.correlation": (float, 0.5),
    "gen.min_len": (int, 4),
    "gen.max_len": (int, 10),
    "gen.dims.text": (int, 16),
    "gen.dims.audio": (int, 12),
    "gen.dims.visual": (int, 14),
    "gen.dims.sentiment": (int, 8),
    "gen.noise_modalities": (_modality_list, ()),
    "gen.seed": (int, 0),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat key = value parsing against the schema; unknown keys are errors."""
    values = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{source}: line {lineno}: unknown key {key!r}")
        parser, _ = CONFIG_SCHEMA[key]
        try:
            values[key] = parser(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(
                f"{source}: line {lineno}: bad value for {key!r}: {exc}"
            ) from exc
    if values["amrf.variant"] not in MIX_VARIANTS:
        raise ConfigError(
            f"{source}: amrf.variant must be one of {MIX_VARIANTS}, "
            f"got {values['amrf.variant']!r}"
        )
    return values


def load_config(path: str | None) -> dict:
    if path is None:
        return {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), source=str(p))


def echo_config(values: dict) -> None:
    for key in CONFIG_SCHEMA:
        v = values[key]
        if isinstance(v, tuple):
            v = ",".join(v)
        print(f"config.{key}={v}")


def synth_spec_from_config(values: dict, seed: int | None) -> SynthSpec:
    return SynthSpec(
        n_samples=values["gen.n_samples"],
        positive_rate=values["gen.positive_rate"],
        text_dim=values["gen.dims.text"],
        audio_dim=values["gen.dims.audio"],
        visual_dim=values["gen.dims.visual"],
        sentiment_dim=values["gen.dims.sentiment"],
        min_len=values["gen.min_len"],
        max_len=values["gen.max_len"],
        separation=values["gen.separation"],
        correlation=values["gen.correlation"],
        noise_modalities=values["gen.noise_modalities"],
        seed=values["gen.seed"] if seed is None else seed,
    )


def model_config_from(values: dict, dims: dict[str, int]) -> ModelConfig:
    return ModelConfig(
        text_dim=dims["text"],
        audio_dim=dims["audio"],
        visual_dim=dims["visual"],
        sentiment_dim=dims["sentiment"],
        window=values["model.window"],
        d=values["model.d"],
        k=values["model.k"],
        hidden=values["model.hidden"],
        gamma=values["model.gamma"],
        variant=values["amrf.variant"],
    )


def train_config_from(values: dict) -> TrainConfig:
    return TrainConfig(
        epochs=values["train.epochs"],
        batch_size=values["train.batch_size"],
        lr=values["train.lr"],
        optimizer=values["train.optimizer"],
        patience=values["train.patience"],
        seed=values["train.seed"],
        threshold=values["train.threshold"],
    )


def _cmd_gen_data(args) -> int:
    values = load_config(args.spec)
    spec = synth_spec_from_config(values, args.seed)
    if args.seed is not None:
        values["gen.seed"] = args.seed
    echo_config(values)
    ds = generate(spec)
    write_dataset(ds, args.out)
    neg, pos = ds.class_counts()
    print(f"samples={len(ds)}")
    print(f"positives={pos}")
    print(f"negatives={neg}")
    print(f"out={args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    values = load_config(args.config)
    data_path = Path(args.data)
    if not data_path.is_file():
        raise UsageError(f"dataset file not found: {data_path}")
    echo_config(values)
    ds = load_dataset(data_path)
    model_cfg = model_config_from(values, ds.dims)
    train_cfg = train_config_from(values)
    store = init_model_params(model_cfg, seed=train_cfg.seed)
    history = train(store, model_cfg, ds, train_cfg)
    save_checkpoint(store, model_cfg, args.out_model)
    history_path = Path(str(args.out_model) + ".history")
    history_path.write_text("\n".join(history_lines(history)) + "\n", encoding="utf-8")
    final = history[-1].val
    best_f1 = max(rec.val.f1 for rec in history)
    print(f"epochs_run={len(history)}")
    print(f"best_f1={best_f1!r}")
    print(f"precision={final.precision!r}")
    print(f"recall={final.recall!r}")
    print(f"f1={final.f1!r}")
    print(f"model={args.out_model}")
    print(f"history={history_path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    for name, p in (("dataset", args.data), ("model", args.model)):
        if not Path(p).is_file():
            raise UsageError(f"{name} file not found: {p}")
    ds = load_dataset(args.data)
    store, model_cfg = load_checkpoint(args.model)
    metrics = evaluate(store, model_cfg, ds, threshold=args.threshold)
    print(f"precision={metrics.precision:.2f}")
    print(f"recall={metrics.recall:.2f}")
    print(f"f1={metrics.f1:.2f}")
    print(f"tp={metrics.tp}")
    print(f"fp={metrics.fp}")
    print(f"fn={metrics.fn}")
    print(f"tn={metrics.tn}")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    values = load_config(args.config)
    seed = values["train.seed"] if args.seed is None else args.seed
    echo_config(values)
    # One random sample at the generator dims; the sample seed is derived
    # from the single CLI seed so everything flows from one number.
    spec = synth_spec_from_config(values, seed ^ 0x5EED)
    spec.n_samples = 1
    sample = generate(spec).samples[0]
    model_cfg = model_config_from(values, spec.dims())
    store = init_model_params(model_cfg, seed=seed)

    def loss_fn(s, tape: Tape):
        y_hat = build_forward(tape, s, sample, model_cfg)
        return focal_loss_node(y_hat, sample.label, model_cfg.gamma)

    err = grad_check(loss_fn, store, eps=1e-4)
    print(f"max_rel_error={err!r}")
    print(f"tolerance={GRAD_CHECK_TOLERANCE!r}")
    if err < GRAD_CHECK_TOLERANCE:
        print("status=ok")
        return EXIT_OK
    print("status=fail")
    return EXIT_NUMERIC


def build_parser() -> _Parser:
    parser = _Parser(prog="canamrf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic multimodal dataset")
    p.add_argument("--spec", help="key = value generator spec file")
    p.add_argument("--out", required=True, help="output .mmjl path")
    p.add_argument("--seed", type=int, help="overrides gen.seed")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out-model", required=True, dest="out_model")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="seed for params and sample")
    p.set_defaults(func=_cmd_grad_check)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DataError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
