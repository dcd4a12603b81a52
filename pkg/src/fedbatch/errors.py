"""Exception hierarchy shared by the library and the CLI exit codes."""


class FedbatchError(Exception):
    """Base class for all package errors."""


class ConfigError(FedbatchError):
    """Malformed configuration, model file or call arguments."""


class DomainError(FedbatchError):
    """State or parameter outside the admissible domain."""


class ControlError(DomainError):
    """Flow outside [0, Q_max]."""


class TargetTimeoutError(FedbatchError):
    """The target was not reached within the configured time horizon."""


class NumericalError(FedbatchError):
    """Integration or root-finding failure."""


class StiffnessError(NumericalError):
    """Step-size underflow; carries the last valid state reached."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class DegenerateAdjointError(NumericalError):
    """Vanishing adjoint vector: the Hamiltonian maximizer is undefined."""


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TIMEOUT = 3
EXIT_DOMAIN = 4
EXIT_NUMERICAL = 5


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, TargetTimeoutError):
        return EXIT_TIMEOUT
    if isinstance(exc, DomainError):
        return EXIT_DOMAIN
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return 1
