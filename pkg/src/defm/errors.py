"""Exception and warning types raised by the engine."""


class DefmError(Exception):
    """Base class for all engine errors."""


# -- data ingestion ---------------------------------------------------------

class DataError(DefmError):
    pass


class MissingColumn(DataError):
    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing column {column!r}{where}")


class NonBinaryOutcome(DataError):
    def __init__(self, row, col, value):
        self.row, self.col, self.value = row, col, value
        super().__init__(f"line {row}: outcome column {col!r} has non-binary value {value!r}")


class UnparseableValue(DataError):
    def __init__(self, row, col, value):
        self.row, self.col, self.value = row, col, value
        super().__init__(f"line {row}: cannot parse {value!r} in column {col!r}")


class DuplicateWave(DataError):
    def __init__(self, individual_id, time):
        self.individual_id, self.time = individual_id, time
        super().__init__(f"individual {individual_id!r} has more than one row at time {time}")


# -- model language ---------------------------------------------------------

class ModelError(DefmError):
    pass


class ModelSyntaxError(ModelError):
    def __init__(self, line, col, expected, found=None):
        self.line, self.col, self.expected, self.found = line, col, expected, found
        got = f", found {found!r}" if found is not None else ""
        super().__init__(f"line {line}, col {col}: expected {expected}{got}")


class UnknownOutcome(ModelError):
    def __init__(self, name, line=None):
        self.name, self.line = name, line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}unknown outcome {name!r}")


class UnknownCovariate(ModelError):
    def __init__(self, name, line=None):
        self.name, self.line = name, line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}unknown covariate {name!r}")


class DuplicateTerm(ModelError):
    def __init__(self, name, line=None):
        self.name, self.line = name, line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}duplicate term name {name!r}")


# -- likelihood -------------------------------------------------------------

class SupportTooLarge(DefmError):
    def __init__(self, k, cap):
        self.k, self.cap = k, cap
        super().__init__(f"K={k} outcomes exceeds the enumeration cap of {cap}")


class EmptySupport(DefmError):
    def __init__(self, prev):
        self.prev = tuple(int(v) for v in prev)
        super().__init__(f"forbid rules exclude every state following {self.prev}")


class ObservedStateExcluded(DefmError):
    def __init__(self, prev, cur, individual_id=None, time=None):
        self.prev = tuple(int(v) for v in prev)
        self.cur = tuple(int(v) for v in cur)
        self.individual_id, self.time = individual_id, time
        who = ""
        if individual_id is not None:
            who = f" (individual {individual_id!r}, wave {time})"
        super().__init__(
            f"observed transition {self.prev} -> {self.cur} is outside the support{who}"
        )


# -- estimation / simulation ------------------------------------------------

class NotNested(DefmError):
    pass


class DataMismatch(DefmError):
    pass


class ForbidsUnsupported(DefmError):
    def __init__(self):
        super().__init__("the Gibbs sampler cannot honour forbid rules; use the exact sampler")


class DefmWarning(UserWarning):
    pass


class NonConvergence(DefmWarning):
    pass


class SingularHessian(DefmWarning):
    pass


class SeparationDetected(DefmWarning):
    pass
