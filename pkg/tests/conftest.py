import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from frifb.fourier import FourierParams


@pytest.fixture(scope="session")
def params():
    return FourierParams()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_noise(rng, shape, sigma=2.0):
    img = gaussian_filter(rng.random(shape), sigma)
    img -= img.min()
    return img / img.max()


def cross_pattern(n=41, arm=10, thick=2):
    img = np.zeros((n, n))
    c = n // 2
    img[c - thick:c + thick + 1, c - arm:c + arm + 1] = 1.0
    img[c - arm:c + arm + 1, c - thick:c + thick + 1] = 1.0
    img[c - arm:c - arm + 3, c - 6:c + 7] = 1.0  # break the 4-fold symmetry
    return gaussian_filter(img, 1.0)


QUARTER_TURNS = [math.pi / 2, math.pi, 3 * math.pi / 2]


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A small synthetic set and a detector trained on it, shared by the
    detector and CLI tests."""
    from frifb.config import RunConfig
    from frifb.pipeline import estimate_lambdas, synthesize, train_model

    root = tmp_path_factory.mktemp("tiny")
    cfg = RunConfig(synth_images=60, synth_negative_images=15, synth_test_images=12, synth_image_size=128,
                    stages=(16, 64), n_random_negatives=2000, hard_per_image=10, seed=3)
    train, test = synthesize(cfg, str(root))
    lambdas = estimate_lambdas(cfg, train.entries)
    model = train_model(cfg, train.entries, lambdas)
    return {"cfg": cfg, "root": root, "train": train, "test": test, "lambdas": lambdas, "model": model}
