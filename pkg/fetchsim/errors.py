"""
ERRORS
======

Every error raised on purpose by the package derives from `FetchSimError`.
Programming errors (broken internal preconditions) are reported with plain
assertions instead.
"""


class FetchSimError(Exception):
    """Base class of all package errors."""


class SchemaError(FetchSimError):
    """A scenario or machine document does not follow its schema."""

    def __init__(self, path, message):
        super().__init__('{0}: {1}'.format(path or '<root>', message))
        self.path = path
        self.message = message


class InvariantViolation(FetchSimError):
    """A loaded entity breaks one of the world invariants."""

    def __init__(self, invariant, entity, detail=''):
        text = '{0} violated by {1}'.format(invariant, entity)
        if detail:
            text += ' ({0})'.format(detail)
        super().__init__(text)
        self.invariant = invariant
        self.entity = entity


class StartOccupied(FetchSimError):
    """Path planning was asked to start on a non-free cell."""


class SensorPoseOccupied(FetchSimError):
    """A simulated sensor was placed on a non-free cell."""


class InvalidAnnotation(FetchSimError):
    """A manual search location is occupied, off the map or duplicated."""


class RoomUnreachable(FetchSimError):
    """The centre pose of a room cannot be reached from the robot."""


class UndeclaredKeyAccess(FetchSimError):
    """A state touched a userdata key it did not declare."""


class UnmappedOutcome(FetchSimError):
    """A state returned an outcome with no transition."""


class ClockOverflow(FetchSimError):
    """Simulated time ran past the configured limit."""


class StepBudgetExceeded(FetchSimError):
    """A machine performed more transitions than its step budget allows."""


class InvalidMachine(FetchSimError):
    """A machine specification failed validation."""

    def __init__(self, report):
        super().__init__(
            'invalid machine:\n' + '\n'.join(str(f) for f in report.findings)
        )
        self.report = report
