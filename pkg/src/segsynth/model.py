"""Step-level operations and the iterative loops over a label-set.

Latent noise is keyed per class: each run draws one 62-bit base from its
generator and derives the noise stream for class k from mix(base, k). A run
can therefore be suspended after any step and resumed bit-exactly from
(canvas, recurrent state, base), and the independent-per-class baseline
variant is invariant to which other classes appear in the label-set.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import Canvas, GenerationOrder, LabelSet, SemanticMap, extract_label_set
from .networks import IterativeMaskVAE

_MASK63 = (1 << 63) - 1
BINARIZE_THRESHOLD = 0.5


# ---------------------------------------------------------------------------
# Distributions and losses

@dataclass
class DiagonalGaussian:
    """(mean, log-variance) pair; log-variance is clamped to [-14, 14]."""

    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise ValueError(
                f"mean shape {tuple(self.mean.shape)} != log_var shape {tuple(self.log_var.shape)}"
            )
        if not bool(torch.isfinite(self.log_var).all()):
            raise ValueError("log_var must be finite")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


def kl_diag_gaussian(q: DiagonalGaussian, p: DiagonalGaussian) -> torch.Tensor:
    """Closed-form KL(q || p) between diagonal Gaussians, summed over the
    latent dimension: 0.5*(lv_p - lv_q) + (var_q + (mu_q - mu_p)^2)/(2 var_p) - 0.5.
    """
    if q.mean.shape != p.mean.shape:
        raise ValueError(
            f"dimension mismatch: q has shape {tuple(q.mean.shape)}, p has {tuple(p.mean.shape)}"
        )
    var_q = torch.exp(q.log_var)
    var_p = torch.exp(p.log_var)
    term = 0.5 * (p.log_var - q.log_var) + (var_q + (q.mean - p.mean) ** 2) / (2 * var_p) - 0.5
    return term.sum(dim=-1)


def sample_gaussian(g: DiagonalGaussian, rng: torch.Generator) -> torch.Tensor:
    """Reparameterized sample mean + exp(log_var / 2) * eps, eps ~ N(0, I)."""
    eps = torch.randn(g.mean.shape, generator=rng, dtype=g.mean.dtype)
    return g.mean + torch.exp(0.5 * g.log_var) * eps


def recon_loss(soft_mask: torch.Tensor, gt_mask: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over pixels."""
    if soft_mask.shape != gt_mask.shape:
        raise ValueError(
            f"shape mismatch: {tuple(soft_mask.shape)} vs {tuple(gt_mask.shape)}"
        )
    return (soft_mask - gt_mask).abs().mean()


# ---------------------------------------------------------------------------
# Recurrent state

@dataclass
class RecurrentState:
    hidden: torch.Tensor
    cell: torch.Tensor

    def clone(self) -> "RecurrentState":
        return RecurrentState(self.hidden.clone(), self.cell.clone())

    def as_tuple(self):
        return self.hidden, self.cell

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        np.save(buf, self.hidden.detach().cpu().numpy())
        np.save(buf, self.cell.detach().cpu().numpy())
        return buf.getvalue()

    @staticmethod
    def from_bytes(raw: bytes) -> "RecurrentState":
        buf = io.BytesIO(raw)
        hidden = torch.from_numpy(np.load(buf))
        cell = torch.from_numpy(np.load(buf))
        return RecurrentState(hidden, cell)


def fresh_state(model: IterativeMaskVAE, batch: int = 1) -> RecurrentState:
    h, c = model.zero_state(batch)
    return RecurrentState(h, c)


# ---------------------------------------------------------------------------
# Noise streams

def draw_base_seed(rng: torch.Generator) -> int:
    """One 62-bit draw that keys every noise stream of a run."""
    return int(torch.randint(0, 1 << 62, (1,), generator=rng).item())


def child_seed(base: int, key: int) -> int:
    x = (base + (key + 1) * 0xBF58476D1CE4E5B9) & _MASK63
    x ^= x >> 30
    x = (x * 0x94D049BB133111EB) & _MASK63
    x ^= x >> 31
    return x


def _noise(shape, seed: int, dtype: torch.dtype) -> torch.Tensor:
    g = torch.Generator()
    g.manual_seed(seed)
    return torch.randn(shape, generator=g, dtype=dtype)


def as_generator(seed_or_rng: int | torch.Generator) -> torch.Generator:
    if isinstance(seed_or_rng, torch.Generator):
        return seed_or_rng
    g = torch.Generator()
    g.manual_seed(int(seed_or_rng))
    return g


# ---------------------------------------------------------------------------
# Tensor conversion helpers

def _label_tensor(label_set: LabelSet, dtype) -> torch.Tensor:
    return torch.tensor([label_set.present], dtype=dtype)


def _onehot(class_index: int, count: int, dtype, batch: int = 1) -> torch.Tensor:
    v = torch.zeros(batch, count, dtype=dtype)
    v[:, class_index] = 1
    return v


def _channels_tensor(channels: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(channels)).to(dtype).unsqueeze(0)


# ---------------------------------------------------------------------------
# Step-level operations over core types

def encode_context(
    model: IterativeMaskVAE,
    label_set: LabelSet,
    target_class: int,
    canvas: Canvas,
) -> torch.Tensor:
    cfg = model.cfg
    if not 0 <= target_class < cfg.catalog.count:
        raise ValueError(f"target class {target_class} out of range 0..{cfg.catalog.count - 1}")
    if not label_set.has(target_class):
        raise ValueError(f"target class {target_class} not in the label-set")
    dtype = cfg.torch_dtype()
    with torch.no_grad():
        return model.context(
            _label_tensor(label_set, dtype),
            _onehot(target_class, cfg.catalog.count, dtype),
            _channels_tensor(canvas.channels, dtype),
        )


def prior_step(
    model: IterativeMaskVAE, ctx: torch.Tensor, state: RecurrentState
) -> tuple[DiagonalGaussian, RecurrentState]:
    if state.hidden.shape[-1] != model.cfg.hidden_dim:
        raise ValueError(
            f"state width {state.hidden.shape[-1]} != hidden_dim {model.cfg.hidden_dim}"
        )
    with torch.no_grad():
        mean, log_var, new_state = model.prior(ctx, state.as_tuple())
    return DiagonalGaussian(mean, log_var), RecurrentState(*new_state)


def posterior_step(
    model: IterativeMaskVAE,
    ctx: torch.Tensor,
    gt_mask: np.ndarray | torch.Tensor,
    state: RecurrentState,
) -> tuple[DiagonalGaussian, RecurrentState]:
    cfg = model.cfg
    if isinstance(gt_mask, np.ndarray):
        gt_mask = torch.from_numpy(np.ascontiguousarray(gt_mask)).to(cfg.torch_dtype())
    if gt_mask.ndim == 2:
        gt_mask = gt_mask.unsqueeze(0)
    if tuple(gt_mask.shape[-2:]) != cfg.resolution:
        raise ValueError(
            f"mask shape {tuple(gt_mask.shape[-2:])} != resolution {cfg.resolution}"
        )
    with torch.no_grad():
        mean, log_var, new_state = model.posterior(ctx, gt_mask, state.as_tuple())
    return DiagonalGaussian(mean, log_var), RecurrentState(*new_state)


def decode_mask(model: IterativeMaskVAE, z: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
    if z.ndim == 1:
        z = z.unsqueeze(0)
    if z.shape[-1] != model.cfg.latent_dim:
        raise ValueError(f"latent length {z.shape[-1]} != latent_dim {model.cfg.latent_dim}")
    with torch.no_grad():
        return model.decode(z, ctx).squeeze(0)


# ---------------------------------------------------------------------------
# Generation

@dataclass
class GenerationRun:
    """Suspended generation: everything needed to resume bit-exactly."""

    label_set: LabelSet
    remaining: tuple[int, ...]
    canvas: Canvas
    state: RecurrentState
    base_seed: int


def start_generation(
    model: IterativeMaskVAE,
    label_set: LabelSet,
    rng: int | torch.Generator,
    order: GenerationOrder | None = None,
) -> GenerationRun:
    cfg = model.cfg
    order = order or cfg.generation_order()
    classes = tuple(order.ordered_present(label_set))
    return GenerationRun(
        label_set=label_set,
        remaining=classes,
        canvas=Canvas.blank(cfg.catalog.count, cfg.resolution),
        state=fresh_state(model),
        base_seed=draw_base_seed(as_generator(rng)),
    )


def step_generation(model: IterativeMaskVAE, run: GenerationRun) -> GenerationRun:
    """Generate the next class of the run: encode the current canvas, step the
    learned prior, sample, decode, binarize, and write the channel."""
    if not run.remaining:
        raise ValueError("generation already finished")
    cfg = model.cfg
    dtype = cfg.torch_dtype()
    k = run.remaining[0]
    with torch.no_grad():
        ctx = model.context(
            _label_tensor(run.label_set, dtype),
            _onehot(k, cfg.catalog.count, dtype),
            _channels_tensor(run.canvas.channels, dtype),
        )
        mean, log_var, state = model.prior(ctx, run.state.as_tuple())
        eps = _noise(mean.shape, child_seed(run.base_seed, k), dtype)
        z = mean + torch.exp(0.5 * log_var) * eps
        soft = model.decode(z, ctx).squeeze(0)
    mask = (soft >= BINARIZE_THRESHOLD).cpu().numpy().astype(np.uint8)
    return GenerationRun(
        label_set=run.label_set,
        remaining=run.remaining[1:],
        canvas=run.canvas.with_channel(k, mask),
        state=RecurrentState(*state),
        base_seed=run.base_seed,
    )


def finish_generation(model: IterativeMaskVAE, run: GenerationRun) -> GenerationRun:
    while run.remaining:
        run = step_generation(model, run)
    return run


def generate(
    model: IterativeMaskVAE,
    label_set: LabelSet,
    rng: int | torch.Generator,
    order_override: GenerationOrder | None = None,
) -> SemanticMap:
    """Autoregressively generate a semantic map for the label-set.

    Starts from a blank canvas and visits the present classes in generation
    order; each step conditions on the binarized masks generated so far.
    Absent classes are skipped entirely and do not advance the recurrent
    state. Bit-reproducible for a fixed seed.
    """
    run = start_generation(model, label_set, rng, order_override)
    run = finish_generation(model, run)
    return run.canvas.to_map()


def replay_prior_states(
    model: IterativeMaskVAE,
    label_set: LabelSet,
    classes: list[int],
    channels: np.ndarray,
) -> tuple[Canvas, RecurrentState]:
    """Rebuild the recurrent state a generation run would have after emitting
    ``classes`` (in the given order) with the masks found in ``channels``.

    The state depends only on the context sequence, so no latent sampling is
    involved. Returns the progressive canvas and the advanced state.
    """
    cfg = model.cfg
    dtype = cfg.torch_dtype()
    canvas = Canvas.blank(cfg.catalog.count, cfg.resolution)
    state = fresh_state(model)
    with torch.no_grad():
        for k in classes:
            ctx = model.context(
                _label_tensor(label_set, dtype),
                _onehot(k, cfg.catalog.count, dtype),
                _channels_tensor(canvas.channels, dtype),
            )
            _, _, new_state = model.prior(ctx, state.as_tuple())
            state = RecurrentState(*new_state)
            canvas = canvas.with_channel(k, channels[k])
    return canvas, state


# ---------------------------------------------------------------------------
# Training forward

@dataclass
class LossBreakdown:
    recon: float
    kl: float
    total: float
    per_step: list[tuple[int, float, float]] = field(default_factory=list)
    total_tensor: torch.Tensor | None = None

    @property
    def steps(self) -> int:
        return len(self.per_step)

    @property
    def mean_recon(self) -> float:
        return self.recon / self.steps if self.steps else 0.0

    @property
    def mean_kl(self) -> float:
        return self.kl / self.steps if self.steps else 0.0


def training_forward(
    model: IterativeMaskVAE,
    map_: SemanticMap,
    label_set: LabelSet,
    lambda_recon: float = 1.0,
    lambda_kl: float = 1e-4,
    rng: int | torch.Generator | None = None,
    order: GenerationOrder | None = None,
    base_seed: int | None = None,
) -> LossBreakdown:
    """Teacher-forced loss over one example.

    Visits the present classes in order; at each step the canvas holds the
    ground-truth masks of previously visited classes, the latent is drawn
    from the posterior, and the step contributes a reconstruction and a KL
    term. Gradients flow to all four parameter groups.
    """
    cfg = model.cfg
    if extract_label_set(map_) != label_set:
        raise ValueError("label-set does not match the non-empty channels of the map")
    dtype = cfg.torch_dtype()
    order = order or cfg.generation_order()
    classes = order.ordered_present(label_set)
    if base_seed is None:
        base_seed = draw_base_seed(as_generator(rng if rng is not None else 0))
    base_seed = child_seed(base_seed, 0)

    label_t = _label_tensor(label_set, dtype)
    gt_all = _channels_tensor(map_.channels, dtype)
    canvas_t = torch.zeros_like(gt_all)
    prior_state = model.zero_state(1)
    post_state = model.zero_state(1)

    recon_total = None
    kl_total = None
    per_step = []
    for k in classes:
        ctx = model.context(label_t, _onehot(k, cfg.catalog.count, dtype), canvas_t)
        p_mean, p_lv, prior_state = model.prior(ctx, prior_state)
        gt = gt_all[:, k]
        q_mean, q_lv, post_state = model.posterior(ctx, gt, post_state)
        eps = _noise(q_mean.shape, child_seed(base_seed, k), dtype)
        z = q_mean + torch.exp(0.5 * q_lv) * eps
        soft = model.decode(z, ctx)
        r = (soft - gt).abs().mean()
        d = kl_diag_gaussian(
            DiagonalGaussian(q_mean, q_lv), DiagonalGaussian(p_mean, p_lv)
        ).squeeze(0)
        recon_total = r if recon_total is None else recon_total + r
        kl_total = d if kl_total is None else kl_total + d
        canvas_t = canvas_t.clone()
        canvas_t[:, k] = gt
        per_step.append((k, float(r.detach()), float(d.detach())))

    if recon_total is None:
        zero = torch.zeros((), dtype=dtype)
        return LossBreakdown(0.0, 0.0, 0.0, [], zero)
    total = lambda_recon * recon_total + lambda_kl * kl_total
    return LossBreakdown(
        recon=float(recon_total.detach()),
        kl=float(kl_total.detach()),
        total=float(total.detach()),
        per_step=per_step,
        total_tensor=total,
    )


@dataclass
class BatchStats:
    loss: torch.Tensor
    mean_recon: float
    mean_kl: float
    mean_total: float
    steps: int


def training_forward_batch(
    model: IterativeMaskVAE,
    maps: list[SemanticMap],
    label_sets: list[LabelSet],
    lambda_recon: float,
    lambda_kl: float,
    orders: list[GenerationOrder],
    base_seed: int,
) -> BatchStats:
    """Batched teacher-forced loss; the batch loss is the mean over examples
    of the per-example weighted sums.

    Examples are stepped position-by-position through their own class
    sequences; rows whose sequence is exhausted are masked out and their
    recurrent state does not advance. Equivalent to running
    ``training_forward`` per example with base ``child_seed(base_seed, i)``.
    """
    cfg = model.cfg
    dtype = cfg.torch_dtype()
    b = len(maps)
    count = cfg.catalog.count
    seqs = [orders[i].ordered_present(label_sets[i]) for i in range(b)]
    max_len = max((len(s) for s in seqs), default=0)

    gt_all = torch.stack(
        [torch.from_numpy(np.ascontiguousarray(m.channels)).to(dtype) for m in maps]
    )
    label_t = torch.tensor([ls.present for ls in label_sets], dtype=dtype)
    canvas_t = torch.zeros_like(gt_all)
    prior_h, prior_c = model.zero_state(b)
    post_h, post_c = model.zero_state(b)

    recon_sums = torch.zeros(b, dtype=dtype)
    kl_sums = torch.zeros(b, dtype=dtype)
    bases = [child_seed(child_seed(base_seed, i), 0) for i in range(b)]

    steps = 0
    for t in range(max_len):
        rows = [i for i in range(b) if len(seqs[i]) > t]
        idx = torch.tensor(rows, dtype=torch.long)
        targets = [seqs[i][t] for i in rows]
        onehot = torch.zeros(len(rows), count, dtype=dtype)
        onehot[range(len(rows)), targets] = 1

        ctx = model.context(label_t[idx], onehot, canvas_t[idx])
        p_mean, p_lv, (nph, npc) = model.prior(ctx, (prior_h[idx], prior_c[idx]))
        gt = gt_all[idx, targets]
        q_mean, q_lv, (nqh, nqc) = model.posterior(ctx, gt, (post_h[idx], post_c[idx]))

        eps = torch.stack(
            [
                _noise((cfg.latent_dim,), child_seed(bases[i], k), dtype)
                for i, k in zip(rows, targets)
            ]
        )
        z = q_mean + torch.exp(0.5 * q_lv) * eps
        soft = model.decode(z, ctx)
        r = (soft - gt).abs().mean(dim=(1, 2))
        d = kl_diag_gaussian(
            DiagonalGaussian(q_mean, q_lv), DiagonalGaussian(p_mean, p_lv)
        )
        recon_sums = recon_sums.index_add(0, idx, r)
        kl_sums = kl_sums.index_add(0, idx, d)

        prior_h = prior_h.index_copy(0, idx, nph)
        prior_c = prior_c.index_copy(0, idx, npc)
        post_h = post_h.index_copy(0, idx, nqh)
        post_c = post_c.index_copy(0, idx, nqc)
        canvas_t[idx, targets] = gt
        steps += len(rows)

    totals = lambda_recon * recon_sums + lambda_kl * kl_sums
    loss = totals.mean()
    return BatchStats(
        loss=loss,
        mean_recon=float(recon_sums.sum().detach()) / max(steps, 1),
        mean_kl=float(kl_sums.sum().detach()) / max(steps, 1),
        mean_total=float(totals.mean().detach()),
        steps=steps,
    )
