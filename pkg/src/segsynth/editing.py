"""Map-level editing: remove, add, and restyle a class, backed by the model.

Edits preserve the user's composition wherever possible:

- ``remove`` keeps classes earlier in generation order bit-exact and
  regenerates only the later ones (their originals were conditioned on the
  removed class and would be stale).
- ``add`` performs exactly one generation step for the new class, conditioned
  on the full existing canvas; nothing else changes.
- ``restyle`` redraws only the target with a fresh latent, conditioned on all
  other channels.

Recurrent states are not stored with maps; they are rebuilt by replaying the
prior recurrence over the preserved classes.
"""
from __future__ import annotations

from dataclasses import dataclass

from .core import LabelSet, SemanticMap
from .model import (
    GenerationRun,
    as_generator,
    draw_base_seed,
    finish_generation,
    replay_prior_states,
)
from .networks import IterativeMaskVAE

EDIT_KINDS = ("remove", "add", "new_style")


class EditError(ValueError):
    pass


@dataclass
class EditRequest:
    kind: str
    target: int
    map: SemanticMap
    label_set: LabelSet
    seed: int = 0

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise EditError(f"unknown edit kind {self.kind!r}; expected one of {EDIT_KINDS}")


def _check_target(model: IterativeMaskVAE, req: EditRequest, want_present: bool) -> None:
    count = model.cfg.catalog.count
    if not 0 <= req.target < count:
        raise EditError(f"target class {req.target} out of range 0..{count - 1}")
    name = model.cfg.catalog.names[req.target]
    if want_present and not req.label_set.has(req.target):
        raise EditError(f"class {name!r} is not in the label-set")
    if not want_present and req.label_set.has(req.target):
        raise EditError(f"class {name!r} is already in the label-set")


def remove_class(model: IterativeMaskVAE, req: EditRequest) -> tuple[SemanticMap, LabelSet]:
    """Drop the target: its channel is zeroed, earlier-in-order channels are
    preserved bit-exactly, and later ones are regenerated."""
    _check_target(model, req, want_present=True)
    order = model.cfg.generation_order()
    present = order.ordered_present(req.label_set)
    pos = present.index(req.target)
    prefix, suffix = present[:pos], present[pos + 1 :]
    new_labels = req.label_set.without_class(req.target)

    canvas, state = replay_prior_states(model, new_labels, prefix, req.map.channels)
    run = GenerationRun(
        label_set=new_labels,
        remaining=tuple(suffix),
        canvas=canvas,
        state=state,
        base_seed=draw_base_seed(as_generator(req.seed)),
    )
    run = finish_generation(model, run)
    return run.canvas.to_map(), new_labels


def add_class(model: IterativeMaskVAE, req: EditRequest) -> tuple[SemanticMap, LabelSet]:
    """Insert the target with one generation step conditioned on the full
    existing canvas; every pre-existing channel stays bit-identical."""
    _check_target(model, req, want_present=False)
    order = model.cfg.generation_order()
    present = order.ordered_present(req.label_set)
    new_labels = req.label_set.with_class(req.target)

    canvas, state = replay_prior_states(model, new_labels, present, req.map.channels)
    run = GenerationRun(
        label_set=new_labels,
        remaining=(req.target,),
        canvas=canvas,
        state=state,
        base_seed=draw_base_seed(as_generator(req.seed)),
    )
    run = finish_generation(model, run)
    return run.canvas.to_map(), new_labels


def restyle_class(model: IterativeMaskVAE, req: EditRequest) -> tuple[SemanticMap, LabelSet]:
    """Redraw only the target with a fresh latent, conditioned on all other
    channels; the label-set is unchanged."""
    _check_target(model, req, want_present=True)
    order = model.cfg.generation_order()
    others = [k for k in order.ordered_present(req.label_set) if k != req.target]

    canvas, state = replay_prior_states(model, req.label_set, others, req.map.channels)
    run = GenerationRun(
        label_set=req.label_set,
        remaining=(req.target,),
        canvas=canvas,
        state=state,
        base_seed=draw_base_seed(as_generator(req.seed)),
    )
    run = finish_generation(model, run)
    return run.canvas.to_map(), req.label_set


def apply_edit(model: IterativeMaskVAE, req: EditRequest) -> tuple[SemanticMap, LabelSet]:
    if req.kind == "remove":
        return remove_class(model, req)
    if req.kind == "add":
        return add_class(model, req)
    return restyle_class(model, req)
