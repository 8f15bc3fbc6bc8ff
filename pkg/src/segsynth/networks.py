"""Network blocks: context encoder, recurrent prior/posterior heads, decoder.

Layout of the generator at each iteration: the context encoder embeds the
label-set and the target class with two small MLPs, tiles the embeddings over
the canvas, and runs a six-layer conv trunk down to a coarse feature map (the
conditional context). The prior head flattens the context through fully
connected layers into an LSTM cell and emits (mean, log-variance); the
posterior head does the same but first fuses a conv encoding of the target's
ground-truth mask into the context. The decoder projects the latent onto the
context grid and upsamples through five (de)conv layers to a sigmoid mask.

Convolution weights carry spectral normalization (one power iteration per
training-mode forward) and conv blocks use instance norm. Power iteration
mutates its buffers only in training mode, so all inference-time calls are
pure functions of (parameters, inputs).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch
from torch import nn
from torch.nn.utils.parametrizations import spectral_norm

from .core import ClassCatalog, GenerationOrder

VARIANTS = ("full", "no_lstm", "fixed_prior", "cvae_sep", "cvae_global")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    catalog: ClassCatalog
    resolution: tuple[int, int] = (64, 64)
    latent_dim: int = 64
    embed_dim: int = 8
    hidden_dim: int = 64
    context_channels: tuple[int, ...] = (10, 20, 24, 32, 32, 32)
    context_strides: tuple[int, ...] = (2, 2, 2, 2, 1, 1)
    mask_channels: tuple[int, ...] = (8, 12, 12, 16)
    mask_strides: tuple[int, ...] = (2, 2, 2, 2)
    decoder_channels: tuple[int, ...] = (24, 16, 10, 6)
    decoder_strides: tuple[int, ...] = (2, 2, 2, 2, 1)
    z_project_channels: int = 8
    variant: str = "full"
    order: tuple[int, ...] | None = None
    use_spectral_norm: bool = True
    use_instance_norm: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant {self.variant!r} not one of {VARIANTS}")
        if len(self.context_channels) != len(self.context_strides):
            raise ConfigError("context_channels and context_strides lengths differ")
        if len(self.mask_channels) != len(self.mask_strides):
            raise ConfigError("mask_channels and mask_strides lengths differ")
        if len(self.decoder_strides) != len(self.decoder_channels) + 1:
            raise ConfigError("decoder needs len(channels)+1 strides (final conv is stride 1)")
        h, w = self.resolution
        down = math.prod(self.context_strides)
        if h % down or w % down:
            raise ConfigError(f"resolution {self.resolution} not divisible by context strides")
        if math.prod(self.mask_strides) != down:
            raise ConfigError("mask encoder strides must reach the context grid")
        if (h // down) * math.prod(self.decoder_strides) != h:
            raise ConfigError("decoder strides do not upsample back to the resolution")
        if self.order is not None and sorted(self.order) != list(range(self.catalog.count)):
            raise ConfigError(f"order {self.order} is not a permutation of catalog classes")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype}")

    @property
    def context_grid(self) -> tuple[int, int]:
        down = math.prod(self.context_strides)
        return self.resolution[0] // down, self.resolution[1] // down

    @property
    def context_shape(self) -> tuple[int, int, int]:
        gh, gw = self.context_grid
        return self.context_channels[-1], gh, gw

    def generation_order(self) -> GenerationOrder:
        if self.order is not None:
            return GenerationOrder(self.order)
        return GenerationOrder.identity(self.catalog.count)

    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


def desk_config(catalog: ClassCatalog, **overrides) -> ModelConfig:
    """CPU-friendly configuration used by the synthetic experiments."""
    return ModelConfig(catalog=catalog, **overrides)


def paper_scale_config(catalog: ClassCatalog, **overrides) -> ModelConfig:
    """Full-resolution configuration (128x128 maps, 384-dim latents)."""
    defaults = dict(
        resolution=(128, 128),
        latent_dim=384,
        embed_dim=64,
        hidden_dim=256,
        context_channels=(32, 64, 128, 256, 256, 256),
        context_strides=(2, 2, 2, 2, 1, 1),
        mask_channels=(32, 64, 128, 128),
        mask_strides=(2, 2, 2, 2),
        decoder_channels=(256, 128, 64, 32),
        decoder_strides=(2, 2, 2, 2, 1),
        z_project_channels=64,
    )
    defaults.update(overrides)
    return ModelConfig(catalog=catalog, **defaults)


def tiny_config(catalog: ClassCatalog, **overrides) -> ModelConfig:
    """Minimal 8x8 configuration for numerical tests (gradient checks)."""
    defaults = dict(
        resolution=(8, 8),
        latent_dim=4,
        embed_dim=4,
        hidden_dim=16,
        context_channels=(6, 8, 8, 8, 8, 8),
        context_strides=(2, 2, 1, 1, 1, 1),
        mask_channels=(4, 6, 6, 8),
        mask_strides=(2, 2, 1, 1),
        decoder_channels=(8, 6, 6, 4),
        decoder_strides=(2, 2, 1, 1, 1),
        z_project_channels=4,
    )
    defaults.update(overrides)
    return ModelConfig(catalog=catalog, **defaults)


def _conv(in_ch, out_ch, stride, cfg: ModelConfig, transpose=False):
    if transpose:
        layer = (
            nn.ConvTranspose2d(in_ch, out_ch, 4, 2, 1)
            if stride == 2
            else nn.ConvTranspose2d(in_ch, out_ch, 3, 1, 1)
        )
    else:
        layer = (
            nn.Conv2d(in_ch, out_ch, 4, 2, 1)
            if stride == 2
            else nn.Conv2d(in_ch, out_ch, 3, 1, 1)
        )
    if cfg.use_spectral_norm:
        layer = spectral_norm(layer)
    return layer


def _block(in_ch, out_ch, stride, cfg: ModelConfig, transpose=False):
    layers = [_conv(in_ch, out_ch, stride, cfg, transpose)]
    if cfg.use_instance_norm:
        layers.append(nn.InstanceNorm2d(out_ch, affine=True))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


class Mlp(nn.Module):
    def __init__(self, in_dim, hidden, out_dim):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, out_dim),
        )

    def forward(self, x):
        return self.net(x)


class ContextEncoder(nn.Module):
    """Fuses (label-set, target class, canvas) into the conditional context.

    The cvae_sep variant blanks the label-set and canvas inputs (each class is
    generated independently); cvae_global blanks only the canvas. Blanking the
    inputs, rather than removing the layers, keeps parameter shapes identical
    across variants.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.catalog.count
        self.cfg = cfg
        self.label_mlp = Mlp(c, cfg.embed_dim, cfg.embed_dim)
        self.target_mlp = Mlp(c, cfg.embed_dim, cfg.embed_dim)
        blocks = []
        in_ch = c + 2 * cfg.embed_dim
        for out_ch, stride in zip(cfg.context_channels, cfg.context_strides):
            blocks.append(_block(in_ch, out_ch, stride, cfg))
            in_ch = out_ch
        self.trunk = nn.Sequential(*blocks)

    def forward(self, label_vec, target_onehot, canvas):
        b, _, h, w = canvas.shape
        if self.cfg.variant == "cvae_sep":
            label_vec = torch.zeros_like(label_vec)
            canvas = torch.zeros_like(canvas)
        elif self.cfg.variant == "cvae_global":
            canvas = torch.zeros_like(canvas)
        lab = self.label_mlp(label_vec)[:, :, None, None].expand(-1, -1, h, w)
        tgt = self.target_mlp(target_onehot)[:, :, None, None].expand(-1, -1, h, w)
        return self.trunk(torch.cat([canvas, lab, tgt], dim=1))


class GaussianHead(nn.Module):
    """Recurrent (or feed-forward) head emitting a diagonal Gaussian.

    no_lstm / cvae_sep / cvae_global replace the recurrence with a
    feed-forward map and pass the state through untouched.
    """

    LOG_VAR_CLAMP = 14.0

    def __init__(self, cfg: ModelConfig, recurrent: bool):
        super().__init__()
        self.recurrent = recurrent
        self.hidden = cfg.hidden_dim
        if recurrent:
            self.cell = nn.LSTMCell(cfg.hidden_dim, cfg.hidden_dim)
        else:
            self.ff = nn.Sequential(nn.Linear(cfg.hidden_dim, cfg.hidden_dim), nn.Tanh())
        self.mean_head = Mlp(cfg.hidden_dim, cfg.hidden_dim, cfg.latent_dim)
        self.log_var_head = Mlp(cfg.hidden_dim, cfg.hidden_dim, cfg.latent_dim)

    def forward(self, h_in, state):
        if self.recurrent:
            h, c = self.cell(h_in, state)
            out, state = h, (h, c)
        else:
            out = self.ff(h_in)
        mean = self.mean_head(out)
        log_var = self.log_var_head(out).clamp(-self.LOG_VAR_CLAMP, self.LOG_VAR_CLAMP)
        return mean, log_var, state


class PriorNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch, gh, gw = cfg.context_shape
        self.fc = nn.Sequential(
            nn.Linear(ch * gh * gw, cfg.hidden_dim), nn.LeakyReLU(0.2, inplace=True)
        )
        recurrent = cfg.variant in ("full", "fixed_prior")
        self.head = GaussianHead(cfg, recurrent)

    def forward(self, ctx, state):
        h = self.fc(ctx.flatten(1))
        return self.head(h, state)


class PosteriorNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        blocks = []
        in_ch = 1
        for out_ch, stride in zip(cfg.mask_channels, cfg.mask_strides):
            blocks.append(_block(in_ch, out_ch, stride, cfg))
            in_ch = out_ch
        self.mask_encoder = nn.Sequential(*blocks)
        ch, gh, gw = cfg.context_shape
        fuse_in = ch + cfg.mask_channels[-1]
        self.fuse = _conv(fuse_in, ch, 1, cfg)
        self.fc = nn.Sequential(
            nn.Linear(ch * gh * gw, cfg.hidden_dim), nn.LeakyReLU(0.2, inplace=True)
        )
        recurrent = cfg.variant in ("full", "fixed_prior")
        self.head = GaussianHead(cfg, recurrent)

    def forward(self, ctx, mask, state):
        m = self.mask_encoder(mask.unsqueeze(1))
        h = self.fuse(torch.cat([ctx, m], dim=1))
        h = self.fc(h.flatten(1))
        return self.head(h, state)


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch, gh, gw = cfg.context_shape
        self.grid = (cfg.z_project_channels, gh, gw)
        self.z_proj = nn.Linear(cfg.latent_dim, cfg.z_project_channels * gh * gw)
        blocks = []
        in_ch = ch + cfg.z_project_channels
        for out_ch, stride in zip(cfg.decoder_channels, cfg.decoder_strides[:-1]):
            blocks.append(_block(in_ch, out_ch, stride, cfg, transpose=True))
            in_ch = out_ch
        self.up = nn.Sequential(*blocks)
        self.out = _conv(in_ch, 1, cfg.decoder_strides[-1], cfg)

    def forward(self, z, ctx):
        b = z.shape[0]
        zmap = self.z_proj(z).view(b, *self.grid)
        h = self.up(torch.cat([ctx, zmap], dim=1))
        return torch.sigmoid(self.out(h)).squeeze(1)


class IterativeMaskVAE(nn.Module):
    """Full generator: context encoder, prior, posterior, and mask decoder.

    The module itself is step-level; the iterative loops over a label-set live
    in :mod:`segsynth.model`. Constructed in eval mode so that step calls are
    deterministic; the trainer switches to train mode around optimizer steps.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.context_encoder = ContextEncoder(cfg)
        self.prior_net = PriorNet(cfg)
        self.posterior_net = PosteriorNet(cfg)
        self.decoder = Decoder(cfg)
        self.to(cfg.torch_dtype())
        self.eval()

    def zero_state(self, batch: int = 1) -> tuple[torch.Tensor, torch.Tensor]:
        h = torch.zeros(batch, self.cfg.hidden_dim, dtype=self.cfg.torch_dtype())
        return h, h.clone()

    def context(self, label_vec, target_onehot, canvas):
        return self.context_encoder(label_vec, target_onehot, canvas)

    def prior(self, ctx, state):
        if self.cfg.variant == "fixed_prior":
            b = ctx.shape[0]
            zeros = ctx.new_zeros(b, self.cfg.latent_dim)
            return zeros, zeros.clone(), state
        return self.prior_net(ctx, state)

    def posterior(self, ctx, mask, state):
        return self.posterior_net(ctx, mask, state)

    def decode(self, z, ctx):
        return self.decoder(z, ctx)

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "context": list(self.context_encoder.parameters()),
            "prior": list(self.prior_net.parameters()),
            "posterior": list(self.posterior_net.parameters()),
            "decoder": list(self.decoder.parameters()),
        }

    def trainable_parameters(self) -> list[nn.Parameter]:
        """Parameters updated by the optimizer; the fixed-prior variant
        freezes the prior branch entirely."""
        groups = self.parameter_groups()
        if self.cfg.variant == "fixed_prior":
            return groups["context"] + groups["posterior"] + groups["decoder"]
        return [p for g in groups.values() for p in g]


def build_model(cfg: ModelConfig, seed: int = 0) -> IterativeMaskVAE:
    """Construct a model with seed-deterministic initialization."""
    torch.manual_seed(seed)
    return IterativeMaskVAE(cfg)


def variant_config(cfg: ModelConfig, kind: str) -> ModelConfig:
    """Switch the variant tag, keeping every shared width unchanged."""
    if kind not in VARIANTS:
        raise ConfigError(f"unknown variant {kind!r}; expected one of {VARIANTS}")
    return replace(cfg, variant=kind)
