"""Exception types raised across the package."""


class DepthcodError(Exception):
    """Base class for all package-specific errors."""


class MissingPair(DepthcodError):
    """An image is missing its depth or ground-truth counterpart."""


class EmptyMask(DepthcodError):
    """A ground-truth mask contains no foreground pixel."""


class BadShape(DepthcodError):
    """Tensor shape violates an operation's contract."""


class BadSize(DepthcodError):
    """Requested image size is incompatible with the encoder strides."""


class BadBox(DepthcodError):
    """Box prompt is degenerate or out of bounds."""


class BadSegments(DepthcodError):
    """Channel count is not divisible by the requested segment count."""


class BadRadius(DepthcodError):
    """Guided-filter radius too large for the feature map."""


class BadMask(DepthcodError):
    """Mask expected to be binary is not."""


class BadBatch(DepthcodError):
    """Prediction/ground-truth batches are misaligned."""


class BadConfig(DepthcodError):
    """Run configuration is invalid or incompatible with a checkpoint."""


class FailedRun(DepthcodError):
    """Training aborted (e.g. NaN loss); carries the last good checkpoint."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
