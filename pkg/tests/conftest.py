import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from patchdelta.checkpoint import Tensor  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def half_zero_delta(rng, rows=64, cols=64, p=16, scale=1.0):
    """Delta whose patches alternate between exact zeros and large noise."""
    delta = np.zeros((rows, cols), dtype=np.float32)
    for br in range(rows // p):
        for bc in range(cols // p):
            if (br + bc) % 2 == 0:
                block = scale * rng.normal(size=(p, p))
                delta[br * p : (br + 1) * p, bc * p : (bc + 1) * p] = block
    return delta


def toy_model(rng, dtype="float32", delta_scale=0.02):
    """A 2-layer base/fine-tuned pair plus a bias and an embedding."""
    shapes = {
        "embed_tokens.weight": (40, 16),
        "layers.0.weight": (64, 48),
        "layers.0.bias": (64,),
        "layers.1.weight": (32, 64),
        "layers.1.bias": (32,),
    }
    base, ft = {}, {}
    for name, shape in shapes.items():
        b = rng.normal(size=shape).astype(np.float32)
        f = b + delta_scale * rng.normal(size=shape).astype(np.float32)
        base[name] = Tensor(b, dtype)
        ft[name] = Tensor(f, dtype)
    return base, ft


@pytest.fixture
def toy(rng):
    return toy_model(rng)
