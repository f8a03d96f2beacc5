"""Exception taxonomy shared by all modules.

Every error carries a category used by the CLI to pick its exit code:
"usage" -> 2, "data" -> 3, "internal" -> 4.
"""


class RrannError(Exception):
    category = "internal"


class ShapeError(RrannError):
    """Operands have incompatible dimensions."""

    category = "usage"


class ParameterError(RrannError):
    """A parameter is out of its documented range."""

    category = "usage"


class DataError(RrannError):
    """Input data violates a precondition (non-finite values, empty corpus)."""

    category = "data"


class FormatError(RrannError):
    """A serialized artifact is malformed. Message names the section and offset."""

    category = "data"


class BuildError(RrannError):
    """Index construction failed."""

    category = "internal"
