import numpy as np
import pytest

from fastcifar.config import Config
from fastcifar.data import synthetic_dataset
from fastcifar.initializers import WhitenConfig
from fastcifar.model import NetConfig
from fastcifar.optim import HyperParams


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_data():
    return synthetic_dataset(256, seed=0), synthetic_dataset(128, seed=1)


@pytest.fixture
def tiny_cfg():
    """A network small enough to train a few epochs in seconds."""
    return Config(hp=HyperParams(batch_size=64, train_epochs=2),
                  net=NetConfig(widths=(8, 16, 16)),
                  whiten=WhitenConfig(sample_count=256))


def numeric_grad(f, x, eps=1e-6):
    """Central finite differences of scalar ``f`` with respect to ``x`` (modified in place, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)


def find_cifar():
    """CIFAR-10 location from $AIRBENCH_DATA or ./cifar10, or None."""
    import os
    from pathlib import Path

    for cand in (os.environ.get("AIRBENCH_DATA"), "cifar10"):
        if not cand:
            continue
        p = Path(cand)
        if (p / "data_batch_1.bin").exists() or (p / "cifar-10-batches-bin" / "data_batch_1.bin").exists() \
                or (p / "train.ads").exists():
            return p
    return None


@pytest.fixture(scope="session")
def cifar_data():
    from fastcifar.data import load_dataset

    path = find_cifar()
    if path is None:
        pytest.skip("CIFAR-10 not available (set AIRBENCH_DATA)")
    return load_dataset(path, "train"), load_dataset(path, "test")
