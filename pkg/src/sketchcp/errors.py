"""Exception hierarchy. CLI exit codes are attached to the classes."""


class SketchCPError(Exception):
    exit_code = 1


class InputFormatError(SketchCPError):
    """Malformed or inconsistent input file."""

    exit_code = 3


class NumericalError(SketchCPError):
    exit_code = 4


class RankDeficiencyError(NumericalError):
    pass


class DegenerateIterationError(NumericalError):
    """A power iterate collapsed to the zero vector."""


class MemoryCapError(SketchCPError):
    pass
