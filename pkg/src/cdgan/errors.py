"""Exception types shared across the package."""


class CdganError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(CdganError):
    """A caller violated an operation's precondition."""


class ShapeError(ContractError):
    """Tensor shapes incompatible with the requested operation."""


class ValidationError(CdganError):
    """An input value is outside its documented domain."""


class FormatError(CdganError):
    """A file does not conform to its declared binary/text format."""


class DegenerateBatchError(CdganError):
    """A contrastive batch contains no sample with any positive."""


class TrainingDiverged(CdganError):
    """A loss became non-finite during training."""

    def __init__(self, term: str, step: int, value: float):
        self.term = term
        self.step = step
        self.value = value
        super().__init__(f"non-finite {term} ({value!r}) at step {step}")
