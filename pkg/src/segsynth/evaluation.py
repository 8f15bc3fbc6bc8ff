"""Metric battery on semantic-map features.

All realism-style numbers here are Frechet distances between Gaussian fits of
features from a map autoencoder trained on ground-truth maps. This replaces
the usual Inception-on-RGB FID pipeline (which needs an image-to-image
translation stage); absolute values are NOT comparable with Inception FID
numbers, only orderings and trends are meaningful.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import torch
from torch import nn

from .core import LabelSet, SemanticMap
from .data import Dataset
from .model import as_generator
from .networks import IterativeMaskVAE

EPS_COV = 1e-6


@dataclass
class MetricValue:
    mean: float
    ci95: float
    n: int

    def __str__(self):
        return f"{self.mean:.4f} +/- {self.ci95:.4f} (n={self.n})"


def _mean_ci(values: np.ndarray) -> MetricValue:
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n == 0:
        return MetricValue(float("nan"), float("nan"), 0)
    sd = values.std(ddof=1) if n > 1 else 0.0
    return MetricValue(float(values.mean()), float(1.96 * sd / math.sqrt(n)), n)


# ---------------------------------------------------------------------------
# Feature autoencoder

class _MapAE(nn.Module):
    def __init__(self, count: int, resolution: tuple[int, int], feature_dim: int):
        super().__init__()
        h, w = resolution
        if h % 8 or w % 8:
            raise ValueError("resolution must be divisible by 8")
        gh, gw = h // 8, w // 8
        self.grid = (64, gh, gw)
        act = nn.LeakyReLU(0.2, inplace=True)
        self.enc = nn.Sequential(
            nn.Conv2d(count, 16, 4, 2, 1), act,
            nn.Conv2d(16, 32, 4, 2, 1), act,
            nn.Conv2d(32, 64, 4, 2, 1), act,
        )
        self.to_feat = nn.Linear(64 * gh * gw, feature_dim)
        self.from_feat = nn.Linear(feature_dim, 64 * gh * gw)
        self.dec = nn.Sequential(
            act,
            nn.ConvTranspose2d(64, 32, 4, 2, 1), act,
            nn.ConvTranspose2d(32, 16, 4, 2, 1), act,
            nn.ConvTranspose2d(16, count, 4, 2, 1), nn.Sigmoid(),
        )

    def encode(self, x):
        return self.to_feat(self.enc(x).flatten(1))

    def decode(self, f):
        return self.dec(self.from_feat(f).view(-1, *self.grid))

    def forward(self, x):
        return self.decode(self.encode(x))


@dataclass
class FeatureExtractor:
    """Frozen map autoencoder; the bottleneck is the feature space."""

    net: _MapAE
    feature_dim: int
    seed: int

    def features(self, map_: SemanticMap) -> np.ndarray:
        x = torch.from_numpy(map_.channels).float().unsqueeze(0)
        with torch.no_grad():
            return self.net.encode(x).squeeze(0).numpy()

    def features_batch(self, maps: list[SemanticMap]) -> np.ndarray:
        x = torch.from_numpy(np.stack([m.channels for m in maps])).float()
        with torch.no_grad():
            return self.net.encode(x).numpy()

    def reconstruct(self, map_: SemanticMap) -> np.ndarray:
        x = torch.from_numpy(map_.channels).float().unsqueeze(0)
        with torch.no_grad():
            return self.net(x).squeeze(0).numpy()


def _train_net(net, make_batch, steps, lr, seed):
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    net.train()
    for _ in range(steps):
        loss = make_batch(net, rng)
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def train_feature_autoencoder(
    train_set: Dataset,
    feature_dim: int = 256,
    steps: int = 800,
    batch_size: int = 16,
    lr: float = 2e-3,
    seed: int = 0,
) -> FeatureExtractor:
    """Train the map autoencoder on ground-truth maps (per-pixel L1) and
    freeze it."""
    if len(train_set) == 0:
        raise ValueError("empty training set")
    torch.manual_seed(seed)
    net = _MapAE(train_set.catalog.count, train_set.resolution, feature_dim)
    stack = torch.from_numpy(np.stack([ex.map.channels for ex in train_set.examples])).float()

    def batch_loss(net, rng):
        idx = rng.integers(0, len(train_set), size=min(batch_size, len(train_set)))
        x = stack[torch.from_numpy(idx)]
        return (net(x) - x).abs().mean()

    _train_net(net, batch_loss, steps, lr, seed)
    return FeatureExtractor(net=net, feature_dim=feature_dim, seed=seed)


def feature_distance(a: SemanticMap, b: SemanticMap, fx: FeatureExtractor) -> float:
    """Euclidean distance between unit-normalized feature vectors."""
    fa = fx.features(a)
    fb = fx.features(b)
    fa = fa / max(float(np.linalg.norm(fa)), 1e-12)
    fb = fb / max(float(np.linalg.norm(fb)), 1e-12)
    return float(np.linalg.norm(fa - fb))


# ---------------------------------------------------------------------------
# Frechet distance

def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature populations:
    |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), covariances
    regularized by EPS_COV * I.
    """
    feats_a = np.atleast_2d(np.asarray(feats_a, dtype=np.float64))
    feats_b = np.atleast_2d(np.asarray(feats_b, dtype=np.float64))
    if feats_a.ndim != 2 or feats_b.ndim != 2:
        raise ValueError("feature sets must be 2-D (n, dim)")
    dim = feats_a.shape[1]
    for name, f in (("a", feats_a), ("b", feats_b)):
        if f.shape[0] < dim + 1:
            raise ValueError(
                f"feature set {name} has {f.shape[0]} vectors; need at least {dim + 1} "
                f"for a nonsingular covariance"
            )
    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    cov_a = np.cov(feats_a, rowvar=False).reshape(dim, dim) + EPS_COV * np.eye(dim)
    cov_b = np.cov(feats_b, rowvar=False).reshape(dim, dim) + EPS_COV * np.eye(dim)

    sqrt_prod, _ = scipy.linalg.sqrtm(cov_a @ cov_b, disp=False)
    if not np.isfinite(sqrt_prod).all():
        cond = np.linalg.cond(cov_a @ cov_b)
        raise ArithmeticError(
            f"matrix square root did not converge (eps={EPS_COV}, condition number {cond:.3e})"
        )
    if np.iscomplexobj(sqrt_prod):
        sqrt_prod = sqrt_prod.real
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(sqrt_prod))


# ---------------------------------------------------------------------------
# Diversity

def diversity(
    generate_fn,
    label_sets: list[LabelSet],
    fx: FeatureExtractor,
    rng: int | torch.Generator,
    n_pairs: int = 3000,
) -> MetricValue:
    """Mean feature distance over pairs generated from the same label-set.

    ``generate_fn(label_set, seed) -> SemanticMap``; each pair draws one
    label-set from the pool and two independent latents.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if not label_sets:
        raise ValueError("label-set pool is empty")
    g = as_generator(rng)
    dists = []
    for _ in range(n_pairs):
        which = int(torch.randint(0, len(label_sets), (1,), generator=g).item())
        s1 = int(torch.randint(0, 1 << 60, (1,), generator=g).item())
        s2 = int(torch.randint(0, 1 << 60, (1,), generator=g).item())
        ls = label_sets[which]
        dists.append(feature_distance(generate_fn(ls, s1), generate_fn(ls, s2), fx))
    return _mean_ci(np.asarray(dists))


# ---------------------------------------------------------------------------
# Shape predictor

class _ShapePredictorNet(nn.Module):
    def __init__(self, count: int, resolution: tuple[int, int]):
        super().__init__()
        act = nn.LeakyReLU(0.2, inplace=True)
        self.net = nn.Sequential(
            nn.Conv2d(2 * count, 16, 4, 2, 1), act,
            nn.Conv2d(16, 32, 4, 2, 1), act,
            nn.Conv2d(32, 64, 4, 2, 1), act,
            nn.ConvTranspose2d(64, 32, 4, 2, 1), act,
            nn.ConvTranspose2d(32, 16, 4, 2, 1), act,
            nn.ConvTranspose2d(16, 1, 4, 2, 1), nn.Sigmoid(),
        )

    def forward(self, x):
        return self.net(x).squeeze(1)


@dataclass
class ShapePredictor:
    """Frozen leave-one-class-out mask predictor."""

    net: _ShapePredictorNet
    count: int
    seed: int

    def predict(self, map_: SemanticMap, target: int) -> np.ndarray:
        x = _predictor_input(map_.channels, target)
        with torch.no_grad():
            return self.net(x.unsqueeze(0)).squeeze(0).numpy()


def _predictor_input(channels: np.ndarray, target: int) -> torch.Tensor:
    count = channels.shape[0]
    inp = torch.from_numpy(channels).float()
    inp[target] = 0.0
    onehot = torch.zeros(count, *channels.shape[1:])
    onehot[target] = 1.0
    return torch.cat([inp, onehot], dim=0)


def leave_one_out_pairs(example_map: SemanticMap, label_set: LabelSet):
    """One (input, target-mask) pair per present class."""
    return [
        (_predictor_input(example_map.channels, k), torch.from_numpy(example_map.channels[k]).float())
        for k in label_set.indices()
    ]


def train_shape_predictor(
    train_set: Dataset,
    steps: int = 800,
    batch_size: int = 16,
    lr: float = 2e-3,
    seed: int = 0,
) -> ShapePredictor:
    """Train the leave-one-class-out predictor (binary cross-entropy) and
    freeze it. The compatibility metric itself is per-pixel L1."""
    if len(train_set) == 0:
        raise ValueError("empty training set")
    torch.manual_seed(seed)
    net = _ShapePredictorNet(train_set.catalog.count, train_set.resolution)

    pools = []
    for ex in train_set.examples:
        for k in ex.label_set.indices():
            pools.append((ex, k))
    if not pools:
        raise ValueError("training set has no present classes")

    bce = nn.BCELoss()

    def batch_loss(net, rng):
        idx = rng.integers(0, len(pools), size=min(batch_size, len(pools)))
        xs, ys = [], []
        for i in idx:
            ex, k = pools[int(i)]
            xs.append(_predictor_input(ex.map.channels, k))
            ys.append(torch.from_numpy(ex.map.channels[k]).float())
        pred = net(torch.stack(xs))
        return bce(pred, torch.stack(ys))

    _train_net(net, batch_loss, steps, lr, seed)
    return ShapePredictor(net=net, count=train_set.catalog.count, seed=seed)


def compatibility_error(
    maps: list[SemanticMap], sp: ShapePredictor
) -> tuple[MetricValue, int]:
    """Mean per-pixel L1 between each present class's channel and its
    prediction from the other channels. Maps with fewer than two present
    classes are skipped; the skip count is returned."""
    errors = []
    skipped = 0
    from .core import extract_label_set

    for m in maps:
        present = extract_label_set(m).indices()
        if len(present) < 2:
            skipped += 1
            continue
        for k in present:
            pred = sp.predict(m, k)
            errors.append(float(np.abs(pred - m.channels[k]).mean()))
    return _mean_ci(np.asarray(errors)), skipped


def reconstruction_error(maps: list[SemanticMap], fx: FeatureExtractor) -> MetricValue:
    """Mean per-pixel L1 between each map and its autoencoder reconstruction."""
    errors = [float(np.abs(fx.reconstruct(m) - m.channels).mean()) for m in maps]
    return _mean_ci(np.asarray(errors))


# ---------------------------------------------------------------------------
# Full battery

@dataclass
class EvalConfig:
    n_pairs: int = 3000
    seed: int = 0
    min_group: int = 5


@dataclass
class MetricReport:
    fid: float
    diversity: MetricValue
    compat_error: MetricValue
    recon_error: MetricValue
    skipped_single_class: int
    by_length: dict[int, dict] = field(default_factory=dict)
    by_order: dict[str, dict] = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            "metric_report_version: 1",
            f"fid: {self.fid:.6f}",
            f"diversity: {self.diversity.mean:.6f}",
            f"diversity_ci95: {self.diversity.ci95:.6f}",
            f"compat_error: {self.compat_error.mean:.6f}",
            f"compat_error_ci95: {self.compat_error.ci95:.6f}",
            f"recon_error: {self.recon_error.mean:.6f}",
            f"recon_error_ci95: {self.recon_error.ci95:.6f}",
            f"skipped_single_class: {self.skipped_single_class}",
        ]
        for length in sorted(self.by_length):
            row = self.by_length[length]
            lines.append(
                f"length[{length}]: n={row['n']} diversity={row['diversity']:.6f} "
                f"compat_error={row['compat_error']:.6f} recon_error={row['recon_error']:.6f}"
            )
        for name in sorted(self.by_order):
            row = self.by_order[name]
            lines.append(
                f"order[{name}]: fid={row['fid']:.6f} diversity={row['diversity']:.6f}"
            )
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(self.to_text())
        with open(out_dir / "records.csv", "w", newline="") as f:
            writer = csv.DictWriter(
                f, fieldnames=["index", "length", "compat_error", "recon_error"]
            )
            writer.writeheader()
            for row in self.records:
                writer.writerow(row)


def evaluate(
    model: IterativeMaskVAE,
    test_set: Dataset,
    fx: FeatureExtractor,
    sp: ShapePredictor,
    config: EvalConfig | None = None,
    orders=None,
) -> MetricReport:
    """Generate one map per test label-set and run the full battery.

    With ``orders`` (mapping name -> GenerationOrder) an extra per-order
    table of fid/diversity is computed.
    """
    from .model import generate

    if len(test_set) == 0:
        raise ValueError("empty test set")
    config = config or EvalConfig()
    g = as_generator(config.seed)

    def generate_fn(label_set, seed, order=None):
        return generate(model, label_set, seed, order_override=order)

    seeds = [int(torch.randint(0, 1 << 60, (1,), generator=g).item()) for _ in test_set.examples]
    gen_maps = [generate_fn(ex.label_set, s) for ex, s in zip(test_set.examples, seeds)]

    gt_feats = fx.features_batch(test_set.maps())
    gen_feats = fx.features_batch(gen_maps)
    fid = frechet_distance(gt_feats, gen_feats)

    div = diversity(generate_fn, test_set.label_sets(), fx, g, n_pairs=config.n_pairs)
    compat, skipped = compatibility_error(gen_maps, sp)
    recon = reconstruction_error(gen_maps, fx)

    records = []
    from .core import extract_label_set

    for i, m in enumerate(gen_maps):
        present = extract_label_set(m).indices()
        comp_i = float("nan")
        if len(present) >= 2:
            comp_i = float(
                np.mean([np.abs(sp.predict(m, k) - m.channels[k]).mean() for k in present])
            )
        records.append(
            {
                "index": i,
                "length": len(test_set.examples[i].label_set),
                "compat_error": comp_i,
                "recon_error": float(np.abs(fx.reconstruct(m) - m.channels).mean()),
            }
        )

    by_length: dict[int, dict] = {}
    lengths = sorted({len(ex.label_set) for ex in test_set.examples})
    for length in lengths:
        idx = [i for i, ex in enumerate(test_set.examples) if len(ex.label_set) == length]
        if len(idx) < config.min_group:
            continue
        maps_l = [gen_maps[i] for i in idx]
        pool = [test_set.examples[i].label_set for i in idx]
        div_l = diversity(
            generate_fn, pool, fx, g, n_pairs=max(10, min(config.n_pairs // 10, 10 * len(idx)))
        )
        comp_l, _ = compatibility_error(maps_l, sp)
        rec_l = reconstruction_error(maps_l, fx)
        by_length[length] = {
            "n": len(idx),
            "diversity": div_l.mean,
            "compat_error": comp_l.mean,
            "recon_error": rec_l.mean,
        }

    by_order: dict[str, dict] = {}
    if orders:
        for name, order in orders.items():
            o_seeds = [
                int(torch.randint(0, 1 << 60, (1,), generator=g).item())
                for _ in test_set.examples
            ]
            o_maps = [
                generate_fn(ex.label_set, s, order)
                for ex, s in zip(test_set.examples, o_seeds)
            ]
            o_fid = frechet_distance(gt_feats, fx.features_batch(o_maps))
            o_div = diversity(
                lambda ls, s: generate_fn(ls, s, order),
                test_set.label_sets(),
                fx,
                g,
                n_pairs=max(10, config.n_pairs // 10),
            )
            by_order[name] = {"fid": o_fid, "diversity": o_div.mean}

    return MetricReport(
        fid=fid,
        diversity=div,
        compat_error=compat,
        recon_error=recon,
        skipped_single_class=skipped,
        by_length=by_length,
        by_order=by_order,
        records=records,
    )
