"""Exception types shared across the package."""


class TunnelSlamError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateInput(TunnelSlamError):
    """Input has too little structure for the requested computation."""


class EmptyCloud(TunnelSlamError):
    """A point cloud required to be non-empty is empty."""


class ShapeMismatch(TunnelSlamError):
    """Array arguments disagree in length or shape."""


class InvalidSpec(TunnelSlamError):
    """A world, trajectory, or experiment description failed validation."""


class SensorOutsideWorld(TunnelSlamError):
    """A sensor pose lies outside every tunnel volume."""


class StreamLengthMismatch(TunnelSlamError):
    """Paired pose/scan streams have different lengths."""


class NoCorrespondences(TunnelSlamError):
    """No usable correspondences were found between two clouds."""


class TooFewPoints(TunnelSlamError):
    """A cloud is too sparse after downsampling to register reliably."""


class MissingNode(TunnelSlamError):
    """An edge references a node that is not in the graph."""


class Disconnected(TunnelSlamError):
    """The pose graph is not weakly connected."""


class NotPositiveDefinite(TunnelSlamError):
    """The normal equations could not be factorized."""


class ParseError(TunnelSlamError):
    """A serialized graph or config file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingOdometrySpan(TunnelSlamError):
    """A consistency check needs an odometry span that is unavailable."""


class SizeLimit(TunnelSlamError):
    """Problem size exceeds the configured exact-solver cap."""


class ChannelClosed(TunnelSlamError):
    """A message was sent on a closed channel."""


class MissingGroundTruth(TunnelSlamError):
    """Ground truth required for evaluation is unavailable."""


class NoOverlap(TunnelSlamError):
    """Two trajectories share no associable stamps."""


class IncompleteMatrix(TunnelSlamError):
    """Result tables were requested from a partially filled experiment matrix."""
