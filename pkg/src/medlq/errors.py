"""Exception hierarchy shared across the package.

Every error carries a short machine-readable token as its first message
word so callers (and the CLI) can branch on str(exc) without isinstance
chains.
"""


class MedLqError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(MedLqError):
    """Raised when matrix dimensions are inconsistent ("incompatible shapes")."""

    def __init__(self, detail: str = ""):
        super().__init__(f"incompatible shapes{': ' + detail if detail else ''}")


class DareDivergedError(MedLqError):
    """Riccati iteration failed to converge ("dare_diverged")."""

    def __init__(self, detail: str = ""):
        super().__init__(f"dare_diverged{': ' + detail if detail else ''}")


class UnstableClosedLoopError(MedLqError):
    """Closed-loop spectral radius >= 1 ("unstable_closed_loop")."""

    def __init__(self, detail: str = ""):
        super().__init__(f"unstable_closed_loop{': ' + detail if detail else ''}")


class AlphaOutOfRangeError(MedLqError):
    """Interpolation parameter outside [0, 1] ("alpha_out_of_range")."""

    def __init__(self, alpha: float):
        super().__init__(f"alpha_out_of_range: {alpha!r}")


class NoSignChangeError(MedLqError):
    """Root bracket precondition violated ("no_sign_change")."""

    def __init__(self, detail: str = ""):
        super().__init__(f"no_sign_change{': ' + detail if detail else ''}")


class InterpolationUnstableError(MedLqError):
    """Every probed interpolation point hit instability ("interpolation_unstable")."""

    def __init__(self, detail: str = ""):
        super().__init__(f"interpolation_unstable{': ' + detail if detail else ''}")


class SingularDesignError(MedLqError):
    """Design matrix not positive definite ("singular_design")."""

    def __init__(self, detail: str = ""):
        super().__init__(f"singular_design{': ' + detail if detail else ''}")


class NonFiniteObservationError(MedLqError):
    """Non-finite sample passed to the estimator ("nonfinite_observation")."""

    def __init__(self, detail: str = ""):
        super().__init__(f"nonfinite_observation{': ' + detail if detail else ''}")


class BadEnvParamError(MedLqError):
    """Invalid physical parameter for an environment builder ("bad_env_param")."""

    def __init__(self, detail: str = ""):
        super().__init__(f"bad_env_param{': ' + detail if detail else ''}")


class BadEnvFileError(MedLqError):
    """Malformed environment definition file ("bad_env_file")."""

    def __init__(self, detail: str = ""):
        super().__init__(f"bad_env_file{': ' + detail if detail else ''}")


class NotStabilizableError(MedLqError):
    """Environment dynamics admit no stabilizing gain ("not_stabilizable")."""

    def __init__(self, detail: str = ""):
        super().__init__(f"not_stabilizable{': ' + detail if detail else ''}")


class UnknownAlgoError(MedLqError):
    """Agent name not in the registry ("unknown_algo")."""

    def __init__(self, name: str):
        super().__init__(f"unknown_algo: {name!r}")
