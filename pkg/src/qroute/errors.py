"""Exception hierarchy shared by all modules."""


class QRouteError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(QRouteError, ValueError):
    pass


class CapacityError(QRouteError):
    """A problem is too large for the dense simulator or the exact oracle."""


class InfeasibleFleetError(QRouteError):
    pass


class InfeasibleModelError(QRouteError):
    pass


class IllegalActionError(QRouteError):
    pass


class NoFeasibleActionError(QRouteError):
    pass


class NotReadyError(QRouteError):
    """Replay buffer holds fewer transitions than requested."""
