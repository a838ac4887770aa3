import numpy as np

from core.numerics import make_rng
from data.dataset import Dataset
from data.exceptions import ClassUnderflowError

FEW_SHOT_POOL = 10
MNIST_VALIDATION = 5000
MNIST_TRAIN = 60000


def _class_indices(dataset, class_id):
    return np.flatnonzero(dataset.labels == class_id)


def few_shot_pool(dataset, pool_size=FEW_SHOT_POOL, seed=0):
    """
    A ``classes x pool_size`` matrix of sample indices drawn per class.

    The n-shot subset is the first ``n`` columns, so subsets for growing ``n``
    are nested.
    """
    if pool_size < 1:
        raise ValueError(f"pool size must be at least 1, got {pool_size}.")
    rng = make_rng(seed)
    pool = np.empty((dataset.classes, pool_size), dtype=np.int64)
    for class_id in range(dataset.classes):
        candidates = _class_indices(dataset, class_id)
        if len(candidates) < pool_size:
            raise ClassUnderflowError(class_id, len(candidates), pool_size)
        pool[class_id] = rng.choice(candidates, size=pool_size, replace=False)
    return pool


def few_shot_subset(dataset, n_per_class, seed=0, pool_size=None):
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be at least 1, got {n_per_class}.")
    pool = few_shot_pool(dataset, max(pool_size or FEW_SHOT_POOL, n_per_class), seed)
    return dataset.subset(pool[:, :n_per_class].ravel(), name=f"{dataset.name}-{n_per_class}shot")


def stratified_subset(dataset, total, seed=0):
    """``total`` samples, split as evenly as possible across classes."""
    rng = make_rng(seed)
    base, extra = divmod(total, dataset.classes)
    chosen = []
    for class_id in range(dataset.classes):
        want = base + (1 if class_id < extra else 0)
        candidates = _class_indices(dataset, class_id)
        if len(candidates) < want:
            raise ClassUnderflowError(class_id, len(candidates), want)
        chosen.append(rng.choice(candidates, size=want, replace=False))
    indices = np.sort(np.concatenate(chosen))
    return dataset.subset(indices, name=f"{dataset.name}-{total}")


def validation_size(train_count, full=MNIST_VALIDATION, reference=MNIST_TRAIN):
    """Validation split scaled from 5000 of 60000 to the training set at hand."""
    return int(round(full * train_count / reference))


def split_validation(dataset, count, seed=0):
    """Random ``(train, validation)`` split holding out ``count`` samples."""
    if not 0 <= count < len(dataset):
        raise ValueError(f"cannot hold out {count} of {len(dataset)} samples.")
    order = make_rng(seed).permutation(len(dataset))
    return (
        dataset.subset(np.sort(order[count:]), name=f"{dataset.name}-train"),
        dataset.subset(np.sort(order[:count]), name=f"{dataset.name}-validation"),
    )


def class_subset(dataset, classes):
    keep = np.flatnonzero(np.isin(dataset.labels, list(classes)))
    return dataset.subset(keep)


def relabel_classes(dataset, classes, name=None):
    """Keep ``classes`` and renumber them ``0..k-1`` in the given order."""
    classes = list(classes)
    subset = class_subset(dataset, classes)
    lookup = np.full(dataset.classes, -1, dtype=np.int64)
    lookup[classes] = np.arange(len(classes))
    return Dataset(images=subset.images, labels=lookup[subset.labels], name=name or subset.name, classes=len(classes))
