"""Exception taxonomy shared by every layer of the package.

Each error carries a short machine-readable ``category`` that the CLI maps
to a stable exit status (see ``alterread.cli``).
"""


class ReaderError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class DimensionError(ReaderError):
    """Operand shapes are incompatible with the requested operation."""

    category = "dimension"


class ContractError(ReaderError):
    """A documented precondition was violated by the caller."""

    category = "contract"


class EmptySupportError(ContractError):
    """A softmax or reduction was asked to normalize over zero positions."""

    category = "contract"


class LifecycleError(ReaderError):
    """A computation graph was used outside its valid lifetime."""

    category = "lifecycle"


class NumericFault(ReaderError):
    """A forward value or gradient stopped being finite."""

    category = "numeric-fault"


class VocabularyError(ReaderError):
    """A token id fell outside the embedding table."""

    category = "config"


class BoundsError(ReaderError):
    """An index referred to a position outside the addressed sequence."""

    category = "contract"


class ParseError(ReaderError):
    """Corpus input did not follow the documented file format."""

    category = "parse"


class DataIntegrityError(ReaderError):
    """A parsed example violated an invariant of the task definition."""

    category = "parse"


class ConfigError(ReaderError):
    """Inconsistent run configuration (flags, checkpoint/dataset mismatch)."""

    category = "config"


class UnknownExampleError(ReaderError):
    """An example id could not be resolved in the loaded dataset."""

    category = "lookup"


class IOFailure(ReaderError):
    """A referenced file or directory is missing or unreadable."""

    category = "io"
