"""Command-line entry points for the full pipeline.

Every command reads and writes the PNG+manifest dataset format, so each
command's output is another command's input. ``--seed`` flows to all random
number generators of the invoked operation.
"""
from __future__ import annotations

import argparse
import sys

from . import checkpoint as ckpt
from . import configfile
from .core import GenerationOrder, make_label_set
from .data import (
    Dataset,
    Example,
    SynthSpec,
    clean_aspect_ratio,
    crop_to_bbox,
    export,
    extract_label_set,
    ingest,
    split,
    synthesize,
)
from .editing import EditRequest, apply_edit
from .model import generate
from .training import train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segsynth", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", default="64x64")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="read, optionally clean, and re-export a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--clean-aspect", action="store_true")
    p.add_argument("--crop-bbox", action="store_true")

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value config document")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant")
    p.add_argument("--order", help="comma-separated class names")

    p = sub.add_parser("sample", help="generate maps from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels", required=True, help="comma-separated class names")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--order", help="comma-separated class names")
    p.add_argument("--out", required=True)

    p = sub.add_parser("edit", help="remove/add/restyle a class of a stored map")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory holding the map")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--kind", required=True, choices=["remove", "add", "new_style"])
    p.add_argument("--target", required=True, help="class name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="run the metric battery against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=200)
    p.add_argument("--metric-net-steps", type=int, default=400)
    p.add_argument("--feature-dim", type=int)

    p = sub.add_parser("serve", help="serve the editing API over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)

    return parser


def _cmd_synth_data(args) -> int:
    h, _, w = args.resolution.partition("x")
    spec = SynthSpec(n_examples=args.n, resolution=(int(h), int(w)), seed=args.seed)
    dataset = synthesize(spec)
    export(dataset, args.out)
    print(f"wrote {len(dataset)} examples to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    dataset = ingest(args.data)
    dataset.check_consistent()
    if args.clean_aspect:
        dataset = clean_aspect_ratio(dataset)
    if args.crop_bbox:
        resolution = dataset.resolution
        cropped = []
        for ex in dataset.examples:
            m = crop_to_bbox(ex.map, resolution)
            cropped.append(
                Example(m, extract_label_set(m), ex.source_id, ex.aspect_ratio)
            )
        dataset = Dataset(cropped, dataset.catalog, dataset.split)
    print(f"{len(dataset)} examples, {dataset.catalog.count} classes")
    if args.out:
        export(dataset, args.out)
        print(f"wrote {args.out}")
    return 0


def _cmd_train(args) -> int:
    dataset = ingest(args.data)
    values = configfile.read_config_file(args.config) if args.config else {}
    values = configfile.apply_overrides(values, args.set)
    configfile.check_known_keys(values)

    extra_model = {}
    if args.variant:
        extra_model["variant"] = args.variant
    if args.order:
        order = GenerationOrder.from_names(args.order.split(","), dataset.catalog)
        extra_model["order"] = order.sequence
    model_config = configfile.build_model_config(values, dataset.catalog, **extra_model)

    extra_train = {}
    if args.seed is not None:
        extra_train["seed"] = args.seed
    train_config = configfile.build_train_config(values, **extra_train)

    result = train(dataset, model_config, train_config, out_dir=args.out)
    print(
        f"trained {train_config.max_steps} steps; "
        f"final checkpoint: {result.final_checkpoint}"
    )
    return 0


def _cmd_sample(args) -> int:
    model = ckpt.load_model(args.checkpoint)
    catalog = model.cfg.catalog
    labels = make_label_set([n for n in args.labels.split(",") if n], catalog)
    order = (
        GenerationOrder.from_names(args.order.split(","), catalog) if args.order else None
    )
    examples = []
    for i in range(args.n):
        m = generate(model, labels, args.seed + i, order_override=order)
        examples.append(Example(m, extract_label_set(m), f"sample_{i:05d}"))
    export(Dataset(examples, catalog), args.out, order or model.cfg.generation_order())
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def _cmd_edit(args) -> int:
    model = ckpt.load_model(args.checkpoint)
    dataset = ingest(args.data, model.cfg.catalog)
    if not 0 <= args.index < len(dataset):
        raise ValueError(f"index {args.index} out of range for {len(dataset)} examples")
    ex = dataset.examples[args.index]
    req = EditRequest(
        kind=args.kind,
        target=model.cfg.catalog.index_of(args.target),
        map=ex.map,
        label_set=ex.label_set,
        seed=args.seed,
    )
    new_map, new_labels = apply_edit(model, req)
    out = Dataset(
        [Example(new_map, new_labels, f"edit_{args.kind}_{args.target}")],
        model.cfg.catalog,
    )
    export(out, args.out, model.cfg.generation_order())
    print(f"applied {args.kind} of {args.target}; wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import (
        EvalConfig,
        evaluate,
        train_feature_autoencoder,
        train_shape_predictor,
    )

    model = ckpt.load_model(args.checkpoint)
    dataset = ingest(args.data, model.cfg.catalog)
    train_set, _, test_set = split(dataset, seed=args.seed)
    if len(test_set) == 0:
        raise ValueError(f"no test examples in {args.data}")
    # the Frechet fit needs more vectors than feature dimensions
    feature_dim = args.feature_dim or max(2, min(64, len(test_set) - 1))
    fx = train_feature_autoencoder(
        train_set, feature_dim=feature_dim, steps=args.metric_net_steps, seed=args.seed
    )
    sp = train_shape_predictor(train_set, steps=args.metric_net_steps, seed=args.seed)
    report = evaluate(
        model, test_set, fx, sp, EvalConfig(n_pairs=args.pairs, seed=args.seed)
    )
    report.write(args.out)
    print(report.to_text(), end="")
    print(f"wrote {args.out}/report.txt and records.csv")
    return 0


def _cmd_serve(args) -> int:
    from .service import run_server

    run_server(args.checkpoint, args.host, args.port)
    return 0


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "edit": _cmd_edit,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.verb](args)
    except (ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"segsynth {args.verb}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
