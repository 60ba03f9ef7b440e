"""Exception hierarchy."""


class MdpLabError(Exception):
    """Base class for all errors raised by mdplab."""


class ValidationError(MdpLabError, ValueError):
    """A model, policy or config failed validation."""


class DimensionMismatch(ValidationError):
    pass


class SingularSystem(MdpLabError):
    """A dense linear system was numerically singular."""


class NonUniqueStationary(MdpLabError):
    pass


class MultichainInput(MdpLabError):
    pass


class TransientState(MdpLabError):
    pass


class InfiniteTau(MdpLabError):
    pass


class InfiniteEntries(MdpLabError):
    pass


class NoCompletedLoops(MdpLabError):
    pass


class BoundednessViolated(MdpLabError):
    def __init__(self, state, action, next_state, value):
        self.state = state
        self.action = action
        self.next_state = next_state
        self.value = value
        super().__init__(
            f"shaped reward {value!r} outside [0, r_max] at "
            f"(s={state}, a={action}, s'={next_state})"
        )


class StructureMismatch(MdpLabError):
    pass


class PreconditionFailed(MdpLabError):
    pass


class NonConvergence(MdpLabError):
    def __init__(self, message, last_span=None):
        self.last_span = last_span
        super().__init__(message)


class DegenerateChain(MdpLabError):
    pass


class LpNumericalFailure(MdpLabError):
    pass


class NonTermination(MdpLabError):
    pass


class ConfigError(MdpLabError):
    pass


class IntegrityError(MdpLabError):
    pass
