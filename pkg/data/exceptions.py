class DatasetError(Exception):
    pass


class DatasetFormatError(DatasetError, ValueError):
    """The file does not follow its binary format."""


class BadMagicError(DatasetFormatError):
    pass


class CountMismatchError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class TrailingDataError(DatasetFormatError):
    pass


class RecordSizeError(DatasetFormatError):
    pass


class InvalidLabelError(DatasetFormatError):
    pass


class ZeroNormError(DatasetError, ValueError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"sample {index} has zero norm and cannot be normalized.")


class ClassUnderflowError(DatasetError, ValueError):
    def __init__(self, class_id, available, requested):
        self.class_id = class_id
        super().__init__(
            f"class {class_id} has {available} samples, {requested} requested."
        )
