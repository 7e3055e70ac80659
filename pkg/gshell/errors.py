"""Exception hierarchy. Every error carries the CLI exit code it maps to."""


class GShellError(Exception):
    exit_code = 1


class InvalidArgumentError(GShellError, ValueError):
    exit_code = 2


class DataError(GShellError, ValueError):
    """Input values are unusable (e.g. a field returned NaN at a vertex)."""

    exit_code = 2


class NumericError(GShellError, ArithmeticError):
    exit_code = 3


class ConsistencyError(GShellError, RuntimeError):
    """Internal provenance broke: a mesh no longer matches the grid it came from."""

    exit_code = 3


class FormatError(GShellError, ValueError):
    exit_code = 4

    def __init__(self, message: str, *, path=None, line: int | None = None, offset: int | None = None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedVersionError(FormatError):
    pass


class PlacementCollisionError(FormatError):
    """Two candidate slots landed on the same tensor coordinate."""

    def __init__(self, first, second, coordinate):
        super().__init__(
            f"candidate slots {first} and {second} both map to tensor coordinate {tuple(int(c) for c in coordinate)}"
        )
        self.first = first
        self.second = second
        self.coordinate = coordinate
