# errors.py — one exception per failure the toolkit reports


class HygieneFeatError(RuntimeError):
    """Base class for every error the toolkit raises on purpose."""


class UnsupportedFormat(HygieneFeatError):
    pass


class TruncatedData(HygieneFeatError):
    pass


class MalformedHeader(HygieneFeatError):
    pass


class IoFailure(HygieneFeatError):
    pass


class InvalidSigma(HygieneFeatError):
    pass


class ImageTooSmall(HygieneFeatError):
    pass


class NotColorImage(HygieneFeatError):
    pass


class EmptyInput(HygieneFeatError):
    pass


class EmptyRegion(HygieneFeatError):
    """No set pixels: the frame holds no hand."""


class OutOfBounds(HygieneFeatError):
    pass


class InvalidK(HygieneFeatError):
    pass


class InvalidRatio(HygieneFeatError):
    pass


class DegenerateNeighborhood(HygieneFeatError):
    pass


class OutOfImage(HygieneFeatError):
    pass


class InvalidTransform(HygieneFeatError):
    pass


class InsufficientFeatures(HygieneFeatError):
    pass


class HeaderMismatch(HygieneFeatError):
    pass


class RowParseError(HygieneFeatError):
    def __init__(self, row, reason):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class FrameLoadError(HygieneFeatError):
    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class ConfigError(HygieneFeatError):
    pass
