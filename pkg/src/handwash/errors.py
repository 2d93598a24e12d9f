"""Exception hierarchy shared by every pipeline stage."""


class HandwashError(Exception):
    """Base class; the CLI maps subclasses of this to exit code 2."""


class ConfigError(HandwashError, ValueError):
    pass


class SplitError(HandwashError):
    pass


class PreprocessError(HandwashError):
    pass


class ParseError(HandwashError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DecodeError(HandwashError):
    pass


class EmptyClipError(DecodeError):
    pass


class CorpusLayoutError(HandwashError):
    pass


class WeightsUnavailableError(HandwashError):
    pass


class ShapeError(HandwashError, ValueError):
    pass


class TrainDataError(HandwashError):
    pass


class DivergenceError(HandwashError):
    def __init__(self, epoch, message="non-finite loss"):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")


class EvalError(HandwashError, ValueError):
    pass


class FrameRangeError(HandwashError, IndexError):
    def __init__(self, frame_index, num_frames=None):
        self.frame_index = frame_index
        msg = f"frame {frame_index} outside clip"
        if num_frames is not None:
            msg += f" of {num_frames} frames"
        super().__init__(msg)
