"""Exception hierarchy.

``InputError`` subclasses flag malformed files, flags or configs;
``DataError`` subclasses flag content that parses but is inconsistent.
The CLI maps the two families onto different exit codes.
"""


class PPIError(Exception):
    pass


class InputError(PPIError):
    pass


class DataError(PPIError):
    pass


class ConfigError(InputError):
    pass


# sequence / interaction parsing
class EmptyFile(InputError):
    pass


class MissingHeader(InputError):
    pass


class EmptySequence(InputError):
    pass


class InvalidResidue(InputError):
    def __init__(self, record_id, position, char):
        self.record_id = record_id
        self.position = position
        self.char = char
        super().__init__(
            f"invalid residue {char!r} at position {position} of record {record_id!r}"
        )


class MalformedRow(InputError):
    pass


class TargetOutOfRange(InputError):
    pass


class UnknownProtein(DataError):
    def __init__(self, protein_id, where=""):
        self.protein_id = protein_id
        msg = f"unknown protein {protein_id!r}"
        super().__init__(f"{msg} ({where})" if where else msg)


class DuplicateId(DataError):
    pass


# tensors and tables
class MissingTensor(InputError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"missing tensor {name!r}")


class ShapeMismatch(InputError):
    pass


class NonFiniteValue(InputError):
    pass


class DimMismatch(InputError):
    pass


class MalformedHeader(InputError):
    pass


# protocol
class InsufficientUniverse(DataError):
    pass


class TooFewExamples(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


# metrics
class DegenerateLabels(DataError):
    pass


class DegenerateSample(DataError):
    pass
