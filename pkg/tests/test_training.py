import numpy as np
import pytest
import torch

import segsynth as ss
from segsynth import checkpoint as ckpt
from segsynth.checkpoint import CheckpointError
from segsynth.training import TrainConfig, TrainingDiverged, make_variant, train


def test_default_hyperparameters_echo():
    cfg = TrainConfig()
    assert cfg.learning_rate == 5e-5
    assert cfg.batch_size == 24
    assert (cfg.beta1, cfg.beta2) == (0.5, 0.999)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_kl=-1)
    with pytest.raises(ValueError):
        TrainConfig(order_mode="sideways")


def test_make_variant(small_cfg):
    for kind in ("full", "no_lstm", "fixed_prior", "cvae_sep", "cvae_global"):
        out = make_variant(small_cfg, kind)
        assert out.variant == kind
        assert out.context_channels == small_cfg.context_channels
        assert out.hidden_dim == small_cfg.hidden_dim
    with pytest.raises(ValueError):
        make_variant(small_cfg, "bogus")


def test_fixed_prior_excluded_from_trainable(small_cfg):
    model = ss.build_model(make_variant(small_cfg, "fixed_prior"), seed=0)
    trainable = {id(p) for p in model.trainable_parameters()}
    prior_params = list(model.prior_net.parameters())
    assert prior_params
    assert all(id(p) not in trainable for p in prior_params)


def test_train_zero_steps(tmp_path, small_cfg, small_synth):
    result = train(small_synth, small_cfg, TrainConfig(max_steps=0, batch_size=4), tmp_path)
    assert result.metric_log == []
    assert len(result.checkpoints) == 1
    assert result.checkpoints[0].exists()


def test_train_empty_dataset_rejected(small_cfg, catalog):
    empty = ss.Dataset([], catalog)
    with pytest.raises(ValueError):
        train(empty, small_cfg, TrainConfig(max_steps=1))


def _short_cfg(**kw):
    defaults = dict(
        max_steps=3, batch_size=4, learning_rate=1e-3, eval_every=2, seed=7
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_single_step_bit_reproducible(small_synth, catalog):
    # 64-bit model, one optimizer step, repeated from scratch
    cfg64 = ss.ModelConfig(
        catalog=catalog,
        resolution=(32, 32),
        latent_dim=8,
        embed_dim=4,
        hidden_dim=16,
        context_channels=(6, 8, 8, 8, 8, 8),
        context_strides=(2, 2, 2, 1, 1, 1),
        mask_channels=(4, 6, 6, 8),
        mask_strides=(2, 2, 2, 1),
        decoder_channels=(8, 6, 6, 4),
        decoder_strides=(2, 2, 2, 1, 1),
        z_project_channels=4,
        dtype="float64",
    )
    runs = []
    for _ in range(2):
        result = train(small_synth, cfg64, _short_cfg(max_steps=1))
        runs.append(
            {k: v.detach().clone() for k, v in result.model.state_dict().items()}
        )
    for key in runs[0]:
        assert torch.equal(runs[0][key], runs[1][key]), key


def test_metric_log_and_checkpoints(tmp_path, small_cfg, small_synth):
    result = train(small_synth, small_cfg, _short_cfg(), tmp_path)
    assert [row[0] for row in result.metric_log] == [1, 2, 3]
    names = [p.name for p in result.checkpoints]
    assert names[0] == "ckpt_000000.sschk"
    assert names[-1] == "ckpt_000003.sschk"
    log = (tmp_path / "metrics.csv").read_text().splitlines()
    assert log[0] == "step,recon,kl,total"
    assert len(log) == 4


def test_training_reduces_loss(small_cfg, small_synth):
    result = train(
        small_synth, small_cfg, TrainConfig(max_steps=120, batch_size=8, learning_rate=2e-3, seed=0, eval_every=0)
    )
    first = np.mean([r[1] for r in result.metric_log[:10]])
    last = np.mean([r[1] for r in result.metric_log[-10:]])
    assert last < first


def test_random_order_mode_runs(small_cfg, small_synth):
    result = train(
        small_synth,
        small_cfg,
        _short_cfg(order_mode="random_per_example"),
    )
    assert len(result.metric_log) == 3


def test_nan_abort(monkeypatch, small_cfg, small_synth):
    from segsynth import training as training_mod
    from segsynth.model import BatchStats

    def bad_forward(*args, **kwargs):
        return BatchStats(
            loss=torch.tensor(float("nan")),
            mean_recon=float("nan"),
            mean_kl=0.0,
            mean_total=float("nan"),
            steps=4,
        )

    monkeypatch.setattr(training_mod, "training_forward_batch", bad_forward)
    with pytest.raises(TrainingDiverged, match="step 1: non-finite recon"):
        train(small_synth, small_cfg, _short_cfg())


def test_fixed_prior_params_frozen_through_training(small_synth, small_cfg):
    cfg = make_variant(small_cfg, "fixed_prior")
    model_before = ss.build_model(cfg, seed=7)
    before = {
        k: v.detach().clone()
        for k, v in model_before.prior_net.state_dict().items()
    }
    result = train(small_synth, cfg, _short_cfg(max_steps=5))
    after = result.model.prior_net.state_dict()
    for key in before:
        assert torch.equal(before[key], after[key]), key


# ---------------------------------------------------------------------------
# Checkpoints

def test_checkpoint_roundtrip_byte_identical(tmp_path, small_model):
    p1, p2 = tmp_path / "a.sschk", tmp_path / "b.sschk"
    ckpt.save_checkpoint(p1, small_model, extra={"step": 9})
    loaded = ckpt.load_model(p1)
    ckpt.save_checkpoint(p2, loaded, extra={"step": 9})
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_reproduces_generation(tmp_path, small_model, catalog):
    p = tmp_path / "m.sschk"
    ckpt.save_checkpoint(p, small_model)
    loaded = ckpt.load_model(p)
    ls = ss.make_label_set(["torso", "head"], catalog)
    a = ss.generate(small_model, ls, 0)
    b = ss.generate(loaded, ls, 0)
    assert np.array_equal(a.channels, b.channels)


def test_checkpoint_truncation_detected(tmp_path, small_model):
    p = tmp_path / "t.sschk"
    ckpt.save_checkpoint(p, small_model)
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) - 100])
    with pytest.raises(CheckpointError, match="truncated at offset"):
        ckpt.load_model(p)


def test_checkpoint_bad_magic(tmp_path, small_model):
    p = tmp_path / "m.sschk"
    ckpt.save_checkpoint(p, small_model)
    raw = bytearray(p.read_bytes())
    raw[0] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="bad magic"):
        ckpt.load_model(p)


def test_checkpoint_rejects_catalog_mismatch(tmp_path, small_model, cat3):
    p = tmp_path / "m.sschk"
    ckpt.save_checkpoint(p, small_model)
    with pytest.raises(CheckpointError, match="catalog"):
        ckpt.load_model(p, expected_catalog=cat3)
    with pytest.raises(CheckpointError, match="resolution"):
        ckpt.load_model(p, expected_resolution=(128, 128))


def test_checkpoint_rng_state_roundtrip(tmp_path, small_model):
    g = torch.Generator().manual_seed(3)
    g.get_state()
    p = tmp_path / "m.sschk"
    ckpt.save_checkpoint(p, small_model, rng_state=bytes(g.get_state().numpy().tobytes()))
    restored = ckpt.load_rng_state(p)
    assert restored == bytes(g.get_state().numpy().tobytes())
