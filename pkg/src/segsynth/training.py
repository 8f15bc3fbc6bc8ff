"""Optimization loop, schedules, checkpointing, and variant orchestration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .core import GenerationOrder
from .data import Dataset
from .model import child_seed, draw_base_seed, training_forward_batch
from .networks import (
    IterativeMaskVAE,
    ModelConfig,
    build_model,
    variant_config,
)

ORDER_MODES = ("fixed", "random_per_example")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 24
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_recon: float = 1.0
    lambda_kl: float = 1e-4
    max_steps: int = 1000
    seed: int = 0
    order_mode: str = "fixed"
    eval_every: int = 500
    grad_clip: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if self.lambda_recon < 0 or self.lambda_kl < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.order_mode not in ORDER_MODES:
            raise ValueError(f"order_mode must be one of {ORDER_MODES}")


def make_variant(model_config: ModelConfig, kind: str) -> ModelConfig:
    """Switch the model variant, keeping all shared widths unchanged."""
    return variant_config(model_config, kind)


@dataclass
class TrainResult:
    model: IterativeMaskVAE
    metric_log: list[tuple[int, float, float, float]]
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def final_checkpoint(self) -> Path | None:
        return self.checkpoints[-1] if self.checkpoints else None


def _write_metrics(path: Path, rows) -> None:
    new_file = not path.exists()
    with open(path, "a") as f:
        if new_file:
            f.write("step,recon,kl,total\n")
        for step, recon, kl, total in rows:
            f.write(f"{step},{recon:.8g},{kl:.8g},{total:.8g}\n")


def train(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Minibatch Adam on the per-step reconstruction + KL objective.

    Logs (step, recon, kl, total) per step, where recon/kl are means per
    visited class over the batch and total is the weighted per-example sum
    averaged over the batch. Checkpoints are written at step 0, every
    ``eval_every`` steps, and at the end when ``out_dir`` is given. Aborts
    with a diagnostic if any loss term becomes non-finite.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    model = build_model(model_config, seed=train_config.seed)
    params = model.trainable_parameters()
    opt = torch.optim.Adam(
        params,
        lr=train_config.learning_rate,
        betas=(train_config.beta1, train_config.beta2),
        foreach=True,
    )
    shuffle_rng = np.random.default_rng(train_config.seed)
    noise_rng = torch.Generator()
    noise_rng.manual_seed(train_config.seed)
    run_base = draw_base_seed(noise_rng)
    fixed_order = model_config.generation_order()

    checkpoints: list[Path] = []
    metric_log: list[tuple[int, float, float, float]] = []

    def write_ckpt(step: int) -> None:
        if out_dir is None:
            return
        p = out_dir / f"ckpt_{step:06d}.sschk"
        save_checkpoint(p, model, extra={"step": step})
        checkpoints.append(p)

    write_ckpt(0)
    if train_config.max_steps == 0:
        return TrainResult(model=model, metric_log=[], checkpoints=checkpoints)

    perm: list[int] = []
    count = model_config.catalog.count
    model.train()
    for step in range(1, train_config.max_steps + 1):
        if len(perm) < train_config.batch_size:
            perm = list(shuffle_rng.permutation(len(dataset))) + perm
        take, perm = perm[: train_config.batch_size], perm[train_config.batch_size :]
        batch = [dataset.examples[int(i)] for i in take]
        if train_config.order_mode == "random_per_example":
            orders = [
                GenerationOrder(tuple(int(j) for j in shuffle_rng.permutation(count)))
                for _ in batch
            ]
        else:
            orders = [fixed_order] * len(batch)

        stats = training_forward_batch(
            model,
            [ex.map for ex in batch],
            [ex.label_set for ex in batch],
            train_config.lambda_recon,
            train_config.lambda_kl,
            orders,
            base_seed=child_seed(run_base, step),
        )
        for name, value in (
            ("recon", stats.mean_recon),
            ("kl", stats.mean_kl),
            ("total", stats.mean_total),
        ):
            if not math.isfinite(value):
                raise TrainingDiverged(f"step {step}: non-finite {name} term ({value})")

        if stats.steps > 0:
            opt.zero_grad()
            stats.loss.backward()
            if train_config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(params, train_config.grad_clip)
            opt.step()

        metric_log.append((step, stats.mean_recon, stats.mean_kl, stats.mean_total))
        if train_config.eval_every > 0 and step % train_config.eval_every == 0:
            write_ckpt(step)

    model.eval()
    final_name = f"ckpt_{train_config.max_steps:06d}.sschk"
    if out_dir is not None and (not checkpoints or checkpoints[-1].name != final_name):
        write_ckpt(train_config.max_steps)
    if out_dir is not None:
        _write_metrics(out_dir / "metrics.csv", metric_log)
    return TrainResult(model=model, metric_log=metric_log, checkpoints=checkpoints)
