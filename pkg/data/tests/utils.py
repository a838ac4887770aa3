from pathlib import Path

import numpy as np

from core.numerics import make_rng
from data.dataset import Dataset

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def synthetic_dataset(count=100, side=6, channels=1, classes=10, seed=0, name="synthetic"):
    """Random non-zero ``uint8`` images with labels cycling through the classes."""
    rng = make_rng(seed)
    images = rng.integers(1, 256, size=(count, side, side, channels), dtype=np.uint8)
    return Dataset(images=images, labels=np.arange(count) % classes, name=name, classes=classes)
