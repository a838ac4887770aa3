import numpy as np

from core.layers import Activation
from core.network import BlockLayout, NetworkModel, TrainConfig, train_unsupervised
from core.numerics import make_rng
from data.codec import LabelCodec

TOY_CODEC = LabelCodec(classes=2, width=4)
TOY_LAYOUT = BlockLayout.of((4, 4, 1), TOY_CODEC.shape)


def toy_rows(count=200, seed=0):
    """Unit-norm 4x4 images, class 0 bright on top, class 1 bright on the left."""
    rng = make_rng(seed)
    labels = np.arange(count) % 2
    prototypes = np.zeros((2, 4, 4), dtype=np.float64)
    prototypes[0, :2] = 1.0
    prototypes[1, :, :2] = 1.0
    images = prototypes[labels] * 0.8 + rng.uniform(0.0, 0.2, size=(count, 4, 4))
    rows = images.reshape(count, -1)
    return (rows / np.linalg.norm(rows, axis=1, keepdims=True)).astype(np.float32), labels


def toy_model(widths=(6,), activation=Activation.IDENTITY, seed=0, sigma=0.1, layout=TOY_LAYOUT):
    return NetworkModel.fully_connected(layout, widths, activation, make_rng(seed), sigma)


def trained_toy_model(widths=(6,), activation=Activation.IDENTITY, epochs=40, seed=0):
    rows, labels = toy_rows(seed=seed)
    model = toy_model(widths, activation, seed)
    cfg = TrainConfig(eta=0.1, epochs=epochs, batch_size=20, seed=seed)
    train_unsupervised(model, model.compose(rows, TOY_CODEC.encode(labels)), cfg)
    return model
