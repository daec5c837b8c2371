"""Exception hierarchy shared by all mmgp modules.

Errors fall in two families that map onto CLI exit codes: validation
problems with the inputs (exit 2) and numerical failures (exit 3).
"""


class MMGPError(Exception):
    exit_code = 1


class ValidationError(MMGPError):
    exit_code = 2


class NumericalError(MMGPError):
    exit_code = 3


class MeshError(ValidationError):
    pass


class NonManifoldError(MeshError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.offset = offset


class SchemaError(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class TopologyMismatch(ValidationError):
    pass


class MultipleBoundaryComponents(ValidationError):
    pass


class AnchorMismatch(ValidationError):
    pass


class CurveOrientationMismatch(ValidationError):
    pass


class SolveFailure(NumericalError):
    pass


class InvertedElements(NumericalError):
    pass


class MorphFailure(NumericalError):
    pass


class TooManyOutside(NumericalError):
    pass


class FactorizationFailure(NumericalError):
    pass


class MeshingFailure(NumericalError):
    pass


class RankDeficientWarning(UserWarning):
    pass


class DegenerateTargetsWarning(UserWarning):
    pass
