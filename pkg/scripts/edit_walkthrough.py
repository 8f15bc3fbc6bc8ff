#!/usr/bin/env python3
"""Editing walkthrough: sample a map from a checkpoint, then remove, add, and
restyle classes, exporting every intermediate map as a dataset directory."""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import segsynth as ss
from segsynth.checkpoint import load_model
from segsynth.editing import EditRequest, apply_edit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--labels", default="torso,head,left_limb,right_limb,garment")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    model = load_model(args.checkpoint)
    catalog = model.cfg.catalog
    labels = ss.make_label_set(args.labels.split(","), catalog)

    current = ss.generate(model, labels, args.seed)
    steps = [("initial", current, labels)]

    target = labels.indices()[-1]
    current, labels = apply_edit(
        model, EditRequest("remove", target, current, labels, seed=args.seed + 1)
    )
    steps.append((f"removed_{catalog.names[target]}", current, labels))

    current, labels = apply_edit(
        model, EditRequest("add", target, current, labels, seed=args.seed + 2)
    )
    steps.append((f"added_{catalog.names[target]}", current, labels))

    restyle = labels.indices()[0]
    current, labels = apply_edit(
        model, EditRequest("new_style", restyle, current, labels, seed=args.seed + 3)
    )
    steps.append((f"restyled_{catalog.names[restyle]}", current, labels))

    examples = [ss.data.Example(m, ls, f"{i:02d}_{name}") for i, (name, m, ls) in enumerate(steps)]
    ss.export(ss.Dataset(examples, catalog), args.out, model.cfg.generation_order())
    print(f"wrote {len(steps)} stages to {args.out}")


if __name__ == "__main__":
    main()
