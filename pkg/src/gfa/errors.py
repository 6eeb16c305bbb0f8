class GFAError(Exception):
    pass


class DomainError(GFAError, ValueError):
    """Evaluation at a singular point of the energy."""


class TieError(DomainError):
    """NearestMax gradient requested where the nearest particle is not unique."""


class UnsupportedOperation(GFAError):
    pass


class GrowthAbort(GFAError):
    """A particle could not be placed within the resample cap."""


class TooManyFailures(GFAError):
    pass
