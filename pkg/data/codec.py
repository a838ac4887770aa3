from dataclasses import dataclass
from functools import cached_property

import numpy as np

from data.exceptions import InvalidLabelError


@dataclass(frozen=True)
class LabelCodec:
    """
    One-hot label blocks with every hot row repeated ``width`` times.

    Class ``k`` is encoded as a ``classes x width`` block whose row ``k`` is
    all ones and every other row zero, then flattened row-major and scaled to
    unit length.
    """

    classes: int
    width: int

    def __post_init__(self):
        if self.classes < 2 or self.width < 1:
            raise ValueError(f"invalid label codec {self.classes}x{self.width}.")

    @classmethod
    def mnist(cls):
        return cls(classes=10, width=28)

    @classmethod
    def cifar10(cls):
        return cls(classes=10, width=10)

    @property
    def shape(self):
        return (self.classes, self.width)

    @property
    def size(self):
        return self.classes * self.width

    @cached_property
    def _blocks(self):
        blocks = np.zeros((self.classes, self.classes, self.width), dtype=np.float32)
        blocks[np.arange(self.classes), np.arange(self.classes), :] = 1.0
        blocks /= np.sqrt(self.width)
        blocks.setflags(write=False)
        return blocks.reshape(self.classes, self.size)

    def blocks(self):
        """Every class's unit-norm label block, one row per class."""
        return self._blocks

    def encode(self, class_id):
        labels = np.asarray(class_id)
        if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= self.classes):
            raise InvalidLabelError(f"labels must be integers in [0, {self.classes}), got {class_id!r}.")
        return self._blocks[labels].copy()
