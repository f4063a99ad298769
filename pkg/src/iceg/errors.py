"""Exception hierarchy shared across the package.

Every error the public API raises derives from IcegError so callers can
catch one base. The service layer maps each subclass to a stable machine
code (see iceg.server).
"""


class IcegError(Exception):
    """Base class for all package errors."""


class ParameterError(IcegError, ValueError):
    """A caller-supplied argument violates an operation's precondition."""


class SceneFormatError(IcegError):
    """Dataset manifest is missing or malformed."""


class DatasetError(IcegError):
    """Dataset contents are inconsistent (resolutions, empty frame list...)."""


class ViewLoadError(IcegError):
    """A referenced view image could not be decoded.

    Carries the offending file path in ``path``.
    """

    def __init__(self, path, reason=""):
        self.path = str(path)
        msg = f"cannot load view image {self.path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class IntegrityError(IcegError):
    """Checkpoint or sidecar file failed its checksum / structure check."""


class BackendError(IcegError):
    """A pluggable backend (segmenter, feature provider, texture tool) failed.

    Carries the backend name so the failure can be attributed.
    """

    def __init__(self, backend, reason=""):
        self.backend = backend
        msg = f"backend '{backend}' failed"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class DegenerateSegmentationError(IcegError):
    """A segmenter returned zero masks for a view."""


class ConsistencyError(IcegError):
    """Cross-object invariant violated (e.g. assignment missing a mask)."""


class PlanError(IcegError):
    """An edit plan references unknown regions or has unresolvable styles."""


class NotFoundError(IcegError):
    """A named scene, view, job or checkpoint does not exist."""


class JobStateError(IcegError):
    """An edit job was driven through an illegal state transition."""


class TrainingDivergedError(IcegError):
    """Optimization produced a non-finite loss.

    ``snapshot_path`` points at the diagnostic checkpoint written on abort.
    """

    def __init__(self, stage, iteration, snapshot_path=None):
        self.stage = stage
        self.iteration = iteration
        self.snapshot_path = snapshot_path
        msg = f"non-finite loss in stage '{stage}' at iteration {iteration}"
        if snapshot_path is not None:
            msg += f" (snapshot: {snapshot_path})"
        super().__init__(msg)
