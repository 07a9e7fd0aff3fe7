"""Exception hierarchy shared by every mdtree module."""


class MdtreeError(Exception):
    """Base class for all mdtree failures.

    Args:
        message: Human readable description.
        node: Optional (k, i) tree index the failure refers to.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node

    def to_dict(self):
        payload = {"error": type(self).__name__, "message": str(self)}
        if self.node is not None:
            payload["node"] = list(self.node)
        return payload


class InputError(MdtreeError):
    """Problems with what the caller handed in (CLI exit code 2)."""


# --- psd_linalg ---
class DimensionMismatch(InputError):
    pass


class NotPositiveDefinite(MdtreeError):
    pass


class NotPsd(MdtreeError):
    pass


# --- tree_model ---
class InvalidInstance(InputError):
    def __init__(self, message, violations=None, node=None):
        super().__init__(message, node=node)
        self.violations = list(violations or [])

    def to_dict(self):
        payload = super().to_dict()
        payload["violations"] = [v.to_dict() for v in self.violations]
        return payload


class NotATree(InputError):
    pass


class EpsTooLarge(InputError):
    pass


class NotStrictlyInterior(MdtreeError):
    pass


class InstanceFormatError(InputError):
    pass


# --- rate_objective ---
class InfeasibleTheta(MdtreeError):
    pass


class SingularTerm(MdtreeError):
    pass


class BoundaryTheta(MdtreeError):
    pass


class InvalidNoiseTree(MdtreeError):
    pass


# --- optimizer ---
class NotConverged(MdtreeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SingularSlack(MdtreeError):
    pass


# --- scheme_builder ---
class SingularEnhancement(MdtreeError):
    pass


class LambdaNotPsd(MdtreeError):
    pass


class GammaSingular(MdtreeError):
    pass


class JointCovSingular(MdtreeError):
    pass


class InvalidSampleCount(InputError):
    pass


# --- oracle ---
class UnsupportedDimension(InputError):
    pass
