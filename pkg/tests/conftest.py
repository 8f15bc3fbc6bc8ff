import numpy as np
import pytest
import torch

import segsynth as ss

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def cat3():
    return ss.ClassCatalog(("a", "b", "c"), ((10, 10, 10), (20, 20, 20), (30, 30, 30)))


@pytest.fixture(scope="session")
def catalog():
    return ss.default_catalog()


@pytest.fixture(scope="session")
def tiny_cfg(cat3):
    return ss.tiny_config(cat3)


@pytest.fixture(scope="session")
def tiny_model(tiny_cfg):
    return ss.build_model(tiny_cfg, seed=0)


@pytest.fixture(scope="session")
def small_cfg(catalog):
    # 32x32 six-class config: cheap enough for edit/e2e unit tests
    return ss.ModelConfig(
        catalog=catalog,
        resolution=(32, 32),
        latent_dim=16,
        embed_dim=8,
        hidden_dim=32,
        context_channels=(8, 16, 16, 16, 16, 16),
        context_strides=(2, 2, 2, 1, 1, 1),
        mask_channels=(8, 8, 8, 16),
        mask_strides=(2, 2, 2, 1),
        decoder_channels=(16, 12, 8, 8),
        decoder_strides=(2, 2, 2, 1, 1),
        z_project_channels=8,
    )


@pytest.fixture(scope="session")
def small_model(small_cfg):
    return ss.build_model(small_cfg, seed=1)


@pytest.fixture(scope="session")
def small_synth(catalog):
    ds = ss.synthesize(ss.SynthSpec(n_examples=24, resolution=(32, 32), seed=5))
    ds.check_consistent()
    return ds


def toy_map(shape=(3, 8, 8), boxes=((0, 2, 6, 2, 6), (1, 0, 2, 3, 5), (2, 4, 8, 0, 2))):
    ch = np.zeros(shape, dtype=np.uint8)
    for k, r0, r1, c0, c1 in boxes:
        ch[k, r0:r1, c0:c1] = 1
    return ss.SemanticMap(ch)


@pytest.fixture
def tiny_example():
    m = toy_map()
    return m, ss.extract_label_set(m)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
