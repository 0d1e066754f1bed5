import numpy as np
import pytest

from reprogram.datagen import Dataset
from reprogram.models import Architecture, FrozenClassifier, init_weights
from reprogram.numkernel import make_rng


def random_model(kind="mlp", input_shape=(3, 8, 8), num_classes=6, seed=0, **kw):
    arch = Architecture(kind, input_shape, num_classes, **kw)
    return FrozenClassifier(arch, init_weights(arch, make_rng(seed)))


def random_dataset(num_classes, per_class, shape, seed=0, split="train"):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    images = rng.uniform(0, 1, size=(len(labels),) + tuple(shape)).astype(np.float32)
    return Dataset(images, labels, [f"c{i}" for i in range(num_classes)], split)


@pytest.fixture
def small_mlp():
    return random_model("mlp", (3, 8, 8), 6, seed=1, hidden=(16,))


@pytest.fixture
def small_convnet():
    return random_model("convnet", (3, 8, 8), 6, seed=2, hidden=(12,), conv_channels=(4, 5))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
