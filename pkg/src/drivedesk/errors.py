"""Exception types shared across the toolkit.

Every deliberate failure raises a subclass of DrivedeskError so callers can
catch toolkit errors without trapping bugs (TypeError, AttributeError, ...).
"""


class DrivedeskError(Exception):
    """Base class for all drivedesk failures."""


# geometry

class InvalidGeometry(DrivedeskError):
    """Mesh is empty or structurally unusable."""


class NoSurface(DrivedeskError):
    """Scalar field has no detectable zero crossing inside the unit ball."""


# shape generation

class InvalidParams(DrivedeskError):
    """Car parameter set violates its category band or a basic bound."""


# neural codec

class InvalidModel(DrivedeskError):
    """Weight shapes do not describe a usable network."""


class NumericalError(DrivedeskError):
    """Non-finite value appeared in a numeric computation."""


class TrainingDiverged(DrivedeskError):
    """Objective exceeded 10x its initial value for a sustained window."""


class InferenceDiverged(DrivedeskError):
    """Latent optimization diverged with the decoder frozen."""


class EmptyReconstruction(DrivedeskError):
    """Decoded field produced no surface inside the sampling box."""


class InvalidWeights(DrivedeskError):
    """Interpolation weights are negative or do not sum to one."""


# imaging / retrieval

class UndefinedSimilarity(DrivedeskError):
    """Cosine similarity requested against a zero vector."""


class InsufficientSet(DrivedeskError):
    """Diversity statistics need at least two descriptors."""


class EmptyCategory(DrivedeskError):
    """Retrieval or evaluation targeted a category with no members."""


# mesher

class InvalidRegion(DrivedeskError):
    """Refinement region demands a level beyond the configured maximum."""


class InvalidKeepPoint(DrivedeskError):
    """Flood-fill seed lies inside the body or outside the domain."""


class IoError(DrivedeskError):
    """File could not be read or written."""


# surrogate

class SingularFit(DrivedeskError):
    """Normal equations are singular and no ridge term was requested."""


class ModelNotFitted(DrivedeskError):
    """Prediction requested before fit."""


# agents

class DuplicateAgent(DrivedeskError):
    """Agent name already registered."""


class UnresolvedTool(DrivedeskError):
    """Agent spec references a tool the runtime does not provide."""


class CommandError(DrivedeskError):
    """Command text failed to parse; carries the offending position."""

    def __init__(self, message: str, position: int = 0):
        super().__init__(message)
        self.position = position


class InvalidPlan(DrivedeskError):
    """Plan graph is cyclic or references unknown agents."""


class ReplayIncomplete(DrivedeskError):
    """Transcript references an artifact that no longer exists."""


class SessionClosed(DrivedeskError):
    """Message posted to a session that was already closed."""


class UnknownAgent(DrivedeskError):
    """Message addressed to an agent missing from the registry."""


# service

class StartupError(DrivedeskError):
    """Service could not bind its port or load its configuration."""


class NotFound(DrivedeskError):
    """Artifact, job or session id is unknown to the store."""
