"""Exception types raised across the package."""


class MaskRankError(ValueError):
    pass


class ParameterError(MaskRankError):
    """A scalar argument or index falls outside its valid range."""


class ShapeError(MaskRankError):
    """Array shapes disagree with each other or with the expected layout."""


class DegenerateInputError(MaskRankError):
    """Input is well-formed but mathematically degenerate (zero norm, empty mask)."""


class FormatError(MaskRankError):
    """A tensor or config file could not be decoded."""


class TrainingDivergedError(RuntimeError):
    pass
