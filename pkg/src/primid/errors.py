"""Exception hierarchy shared across the toolkit."""


class PrimIdError(Exception):
    """Base class for all primid errors."""


# Alignment
class DegenerateLandmarks(PrimIdError):
    """Landmark triple is collinear, duplicated, or non-finite."""


class EmptyDataset(PrimIdError):
    """A landmark template was requested for zero landmark sets."""


class SingularSystem(PrimIdError):
    """Normal equations of the similarity fit are singular."""


# Neural engine
class ShapeError(PrimIdError):
    """Tensor shapes are incompatible with the requested operation."""


class ZeroVector(PrimIdError):
    """A near-zero vector cannot be normalized."""


class LabelError(PrimIdError):
    """A class label indexes outside the weight matrix."""


class StateError(PrimIdError):
    """backward() called without a cached forward pass."""


class ConfigError(PrimIdError):
    """Invalid network or run configuration."""


class DatasetError(PrimIdError):
    """Training dataset violates its preconditions."""


class FormatError(PrimIdError):
    """Serialized file is corrupt, truncated, or version-mismatched."""


# Gallery / matching
class SpeciesConflict(PrimIdError):
    """Enrollment species disagrees with the individual's existing record."""


class NotFound(PrimIdError):
    """Unknown individual id."""


class EmptyTemplate(PrimIdError):
    """Template has no enrolled embeddings."""


class EmptyGallery(PrimIdError):
    """Identification against a gallery with no individuals."""


# Evaluation protocols
class SplitError(PrimIdError):
    """Fold count exceeds the number of individuals."""


class SampleSizeError(PrimIdError):
    """Too few impostor scores to calibrate the requested FAR."""


class ProtocolError(PrimIdError):
    """Evaluation protocol preconditions violated (e.g. no distractors)."""


class ReportError(PrimIdError):
    """Fold metrics are incomplete for aggregation."""
