"""Exception hierarchy shared by all c3net modules.

The CLI maps ``DataError`` subclasses to exit code 2 and ``NumericalError``
to exit code 3.
"""


class C3NetError(Exception):
    pass


class DataError(C3NetError, ValueError):
    """Input data failed validation."""


class ParseError(DataError):
    def __init__(self, message, line=None, record=None):
        self.line = line
        self.record = record
        where = []
        if record is not None:
            where.append(f"record {record}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class UnsupportedElementError(DataError):
    def __init__(self, element, record=None):
        self.element = element
        self.record = record
        msg = f"unsupported element {element!r}"
        if record is not None:
            msg += f" in record {record}"
        super().__init__(msg)


class TypingError(DataError):
    def __init__(self, message, atom_index=None):
        self.atom_index = atom_index
        super().__init__(message)


class ContractError(C3NetError, ValueError):
    """A precondition on an operation's arguments was violated."""


class ShapeError(ContractError):
    pass


class CheckpointError(DataError):
    pass


class NumericalError(C3NetError, ArithmeticError):
    pass
