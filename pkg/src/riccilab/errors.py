"""Exception types raised across the package."""


class RiccilabError(Exception):
    """Base class for all errors raised by riccilab."""


class SpdViolation(RiccilabError):
    """A nodal metric matrix fell below the positive-definiteness floor."""

    def __init__(self, message, node=None, eigenvalue=None):
        super().__init__(message)
        self.node = node
        self.eigenvalue = eigenvalue


class GridMismatch(RiccilabError):
    pass


class NoConvergence(RiccilabError):
    def __init__(self, message, max_iters=None, best_residual=None):
        super().__init__(message)
        self.max_iters = max_iters
        self.best_residual = best_residual


class PositivityFailure(RiccilabError):
    """The ground state changed sign or came too close to zero."""


class CflViolation(RiccilabError):
    pass


class JacobianCollapse(RiccilabError):
    pass


class SolverStall(RiccilabError):
    pass


class InsufficientData(RiccilabError):
    pass


class FormatError(RiccilabError):
    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class ChecksumMismatch(RiccilabError):
    pass


class ConfigError(RiccilabError):
    pass
