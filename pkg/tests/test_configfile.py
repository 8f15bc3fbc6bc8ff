import pytest

import segsynth as ss
from segsynth.configfile import (
    ConfigFileError,
    apply_overrides,
    build_model_config,
    build_train_config,
    check_known_keys,
    parse_config_text,
)

DOC = """
# model section
resolution = 32x32
latent_dim = 16
embed_dim = 8
hidden_dim = 32
context_channels = 8,16,16,16,16,16
context_strides = 2,2,2,1,1,1
mask_channels = 8,8,8,16
mask_strides = 2,2,2,1
decoder_channels = 16,12,8,8
decoder_strides = 2,2,2,1,1
z_project_channels = 8
variant = full
order = head,torso,left_limb,right_limb,garment,accessory

# training section
learning_rate = 1e-3
batch_size = 4
beta1 = 0.5
beta2 = 0.999
lambda_kl = 1e-4
max_steps = 3
seed = 11
order_mode = fixed
eval_every = 2
"""


def test_parse_and_build(catalog):
    values = parse_config_text(DOC)
    check_known_keys(values)
    mc = build_model_config(values, catalog)
    assert mc.resolution == (32, 32)
    assert mc.latent_dim == 16
    assert mc.order[0] == catalog.index_of("head")
    tc = build_train_config(values)
    assert tc.batch_size == 4 and tc.seed == 11 and tc.max_steps == 3
    assert tc.learning_rate == pytest.approx(1e-3)


def test_overrides_win():
    values = parse_config_text(DOC)
    values = apply_overrides(values, ["latent_dim=24", "seed=99"])
    assert values["latent_dim"] == "24" and values["seed"] == "99"


def test_bad_override_rejected():
    with pytest.raises(ConfigFileError):
        apply_overrides({}, ["latent_dim"])


def test_unknown_key_rejected():
    with pytest.raises(ConfigFileError, match="warp_speed"):
        check_known_keys({"warp_speed": "9"})


def test_malformed_line_rejected():
    with pytest.raises(ConfigFileError, match="line 2"):
        parse_config_text("a = 1\nnonsense\n")


def test_bad_resolution_rejected(catalog):
    with pytest.raises(ConfigFileError):
        build_model_config({"resolution": "64"}, catalog)


def test_comments_and_blanks_ignored():
    values = parse_config_text("\n# only a comment\nseed = 3  # trailing\n")
    assert values == {"seed": "3"}
