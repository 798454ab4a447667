"""Error types raised across the package.

Every error derives from :class:`HidecError` so callers (the CLI in
particular) can catch domain failures in one place and report the class
name.
"""


class HidecError(Exception):
    """Base class for all domain errors."""


# taxonomy
class TaxonomyError(HidecError):
    pass


class MultipleParents(TaxonomyError):
    pass


class OrphanLabel(TaxonomyError):
    pass


class CyclicTaxonomy(TaxonomyError):
    pass


class UnknownLabel(TaxonomyError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# sub-hierarchy codec
class CodecError(HidecError):
    pass


class EmptyLabelSet(CodecError):
    pass


class InvalidSubHierarchy(CodecError):
    pass


class ParseError(CodecError):
    pass


class InvalidEdge(CodecError):
    pass


class DuplicateLabel(CodecError):
    pass


# numerics
class ShapeError(HidecError, ValueError):
    pass


class DoubleBackward(HidecError, RuntimeError):
    pass


class NumericalError(HidecError, FloatingPointError):
    pass


# text encoder
class EmptyCorpus(HidecError, ValueError):
    pass


class UnknownToken(HidecError, IndexError):
    pass


# decoder
class LevelOverflow(HidecError, IndexError):
    pass


class NotALabelPosition(HidecError, ValueError):
    pass


# training
class MissingLabels(HidecError, ValueError):
    pass


class NumericalDivergence(HidecError, FloatingPointError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class CheckpointError(HidecError):
    pass


class IncompatibleCheckpoint(CheckpointError):
    pass


class TaxonomyMismatch(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


# metrics / datagen
class AlignmentError(HidecError, ValueError):
    pass


class InvalidSpec(HidecError, ValueError):
    pass
