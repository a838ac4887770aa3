"""Named dataset layouts and network architectures."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.layers import Activation
from core.network import BlockLayout, NetworkModel, NormPolicy
from core.numerics import make_rng
from data.cifar import load_cifar10
from data.codec import LabelCodec
from data.dataset import Dataset
from data.idx import load_mnist
from data.subsets import relabel_classes

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "test": ("test_batch.bin",),
}
CIFAR_SUBDIR = "cifar-10-batches-bin"


def resolve_file(dataset_dir, name, subdirs=()):
    """Find ``name`` (or ``name.gz``) under the dataset directory."""
    base = Path(dataset_dir)
    tried = []
    for folder in (base, *(base / s for s in subdirs)):
        for candidate in (folder / name, folder / f"{name}.gz"):
            if candidate.exists():
                return candidate
            tried.append(str(candidate))
    raise FileNotFoundError(f"dataset file {name} not found; looked for {', '.join(tried)}.")


def toy_dataset(count, seed, side=4):
    """Two classes of ``side x side`` images: a bright top half or a bright left half."""
    rng = make_rng(seed)
    labels = np.arange(count) % 2
    prototypes = np.zeros((2, side, side, 1), dtype=np.float32)
    prototypes[0, : side // 2] = 1.0
    prototypes[1, :, : side // 2] = 1.0
    noise = rng.uniform(0.0, 0.2, size=(count, side, side, 1)).astype(np.float32)
    images = np.clip(prototypes[labels] * 0.8 + noise, 0.0, 1.0)
    return Dataset(images=images, labels=labels, name="toy", classes=2)


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    kind: str
    image_shape: tuple
    classes: int = 10
    label_width: int = 28
    # Side of the random training crop; the network sees crop_side x crop_side images.
    crop_side: int | None = None
    # Original class ids kept (and renumbered from 0) for reduced-class presets.
    keep_classes: tuple | None = None

    @property
    def input_shape(self):
        if self.crop_side is None:
            return self.image_shape
        return (self.crop_side, self.crop_side, self.image_shape[2])

    def codec(self):
        return LabelCodec(classes=self.classes, width=self.label_width)

    def layout(self, labelled=True):
        label = (self.classes, self.label_width) if labelled else None
        return BlockLayout.of(self.input_shape, label)

    def files(self, dataset_dir, split):
        if self.kind == "mnist":
            return [resolve_file(dataset_dir, name) for name in MNIST_FILES[split]]
        if self.kind == "cifar10":
            return [resolve_file(dataset_dir, name, (CIFAR_SUBDIR,)) for name in CIFAR_FILES[split]]
        return []

    def load(self, dataset_dir, split, seed=0):
        dataset = self._load(dataset_dir, split, seed)
        if self.keep_classes:
            dataset = relabel_classes(dataset, self.keep_classes, name=f"{self.name}-{split}")
        return dataset

    def _load(self, dataset_dir, split, seed):
        if self.kind == "mnist":
            images, labels = self.files(dataset_dir, split)
            return load_mnist(images, labels, name=f"mnist-{split}")
        if self.kind == "cifar10":
            return load_cifar10(self.files(dataset_dir, split), name=f"cifar10-{split}")
        count = 200 if split == "train" else 100
        return toy_dataset(count, seed + (0 if split == "train" else 1), side=self.image_shape[0])


DATASET_PRESETS = {
    "mnist": DatasetPreset("mnist", "mnist", (28, 28, 1), label_width=28),
    "cifar10": DatasetPreset("cifar10", "cifar10", (32, 32, 3), label_width=10),
    "cifar10_crop": DatasetPreset("cifar10_crop", "cifar10", (32, 32, 3), label_width=10, crop_side=28),
    "cifar10_binary": DatasetPreset(
        "cifar10_binary", "cifar10", (32, 32, 3), classes=2, label_width=10, keep_classes=(0, 1)
    ),
    "toy": DatasetPreset("toy", "toy", (4, 4, 1), classes=2, label_width=4),
}


@dataclass(frozen=True)
class ModelPreset:
    name: str
    kind: str
    widths: tuple = ()
    units: tuple = ()
    field_size: tuple = (9, 9)
    activation: Activation = Activation.STD_ABS
    labelled: bool = True
    full_top: bool = True
    # Width of a full layer expressed as "same as the input"; resolved per layout.
    match_input: bool = False

    def build(self, layout, rng, sigma=0.01, activation=None, norm_policy=NormPolicy.PER_BLOCK, field_size=None):
        activation = Activation(activation or self.activation)
        if self.kind == "local":
            return NetworkModel.locally_connected(
                layout, self.units, tuple(field_size or self.field_size), rng,
                activation=activation, sigma=sigma, norm_policy=norm_policy, full_top=self.full_top,
            )
        widths = (layout.size,) * len(self.widths) if self.match_input else self.widths
        return NetworkModel.fully_connected(layout, widths, activation, rng, sigma, norm_policy)


def _mnist_layers(depth):
    return ModelPreset(f"mnist_{depth}layer", "full", widths=(0,) * depth, match_input=True)


MODEL_PRESETS = {
    **{f"mnist_{depth}layer": _mnist_layers(depth) for depth in range(1, 5)},
    "cifar_local3": ModelPreset("cifar_local3", "local", units=(3, 3), field_size=(9, 9)),
    "cifar_crop_local3": ModelPreset(
        "cifar_crop_local3", "local", units=(9, 9, 9), field_size=(5, 5), full_top=False
    ),
    "features_square2": ModelPreset(
        "features_square2", "full", widths=(784, 784), activation=Activation.SQUARE_NORM, labelled=False
    ),
    "toy_2layer": ModelPreset("toy_2layer", "full", widths=(12, 8)),
    "toy_unlabelled": ModelPreset("toy_unlabelled", "full", widths=(6,), labelled=False),
}


def dataset_preset(name):
    try:
        return DATASET_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown dataset preset {name!r}; choose from {sorted(DATASET_PRESETS)}.") from None


def model_preset(name):
    try:
        return MODEL_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown model preset {name!r}; choose from {sorted(MODEL_PRESETS)}.") from None
