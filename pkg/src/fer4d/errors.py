"""Exception hierarchy shared by every stage of the pipeline."""


class FER4DError(Exception):
    """Base class for all errors raised by this package."""


class SchemaMismatch(FER4DError):
    pass


class EmptyCrop(FER4DError):
    pass


class DegenerateMesh(FER4DError):
    pass


class MissingColors(FER4DError):
    pass


class LengthMismatch(FER4DError):
    pass


class DegenerateBounds(FER4DError):
    pass


class ShapeMismatch(FER4DError):
    pass


class EmptyClass(FER4DError):
    pass


class MissingSlice(FER4DError):
    pass


class TooFewSubjects(FER4DError):
    pass


class MissingCell(FER4DError):
    pass


class MissingFile(FER4DError):
    pass


class ConfigError(FER4DError):
    pass


class StageDependencyError(FER4DError):
    pass


class WorkspaceLocked(FER4DError):
    pass


class ModelFormatError(FER4DError):
    pass


class ParseError(FER4DError):
    """Malformed input text; carries the file, line and column of the fault."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
                if column is not None:
                    where += f":{column}"
            where += ": "
        super().__init__(where + message)
