"""Exception hierarchy shared by all stages of the pipeline."""


class MBSlamError(Exception):
    """Base class for every error raised by mbslam."""


# se3
class DegenerateRotationError(MBSlamError, ValueError):
    """Rotation angle at the cut locus (pi); the logarithm is not unique."""


# ground metrology
class GroundMetrologyError(MBSlamError, ValueError):
    pass


class HorizonDegenerateError(GroundMetrologyError):
    """The viewing ray is (nearly) parallel to the ground plane."""


class NegativeDepthError(GroundMetrologyError):
    """The ray meets the plane behind the camera."""


# scale recovery
class ScaleRecoveryError(MBSlamError, ValueError):
    pass


class ZeroTranslationError(ScaleRecoveryError):
    """Scale is unobservable for a stationary or rotation-only step."""


class NoCorrespondencesError(ScaleRecoveryError):
    pass


class FallbackScaleError(ScaleRecoveryError):
    """Too few correspondences survived filtering; caller should reuse a previous scale."""

    def __init__(self, message: str, surviving: int = 0):
        super().__init__(message)
        self.surviving = surviving


# shape prior
class BehindCameraError(MBSlamError, ValueError):
    pass


class InsufficientKeypointsError(MBSlamError, ValueError):
    pass


# pose graph
class MissingLoopElementError(MBSlamError, KeyError):
    pass


class DisconnectedGraphError(MBSlamError, ValueError):
    def __init__(self, message: str, nodes=()):
        super().__init__(message)
        self.nodes = tuple(nodes)


class MissingSourceError(MBSlamError, ValueError):
    pass


# io / evaluation
class ParseError(MBSlamError, ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class LengthMismatchError(MBSlamError, ValueError):
    pass


class DegenerateDenominatorError(MBSlamError, ZeroDivisionError):
    pass
