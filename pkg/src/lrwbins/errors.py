"""Exception hierarchy shared by all lrwbins modules."""


class LRwBinsError(Exception):
    """Base class for every error raised by this package."""


class MissingColumn(LRwBinsError):
    pass


class NonBinaryLabel(LRwBinsError):
    pass


class UnparseableValue(LRwBinsError):
    def __init__(self, row, column, value):
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r}")
        self.row = row
        self.column = column
        self.value = value


class BadFractions(LRwBinsError):
    pass


class EmptyTrainingSet(LRwBinsError):
    pass


class NonFiniteInput(LRwBinsError):
    pass


class SingleClassDataset(LRwBinsError):
    pass


class SingleClass(LRwBinsError):
    """ROC AUC is undefined when only one class is present."""


class SchemaMismatch(LRwBinsError):
    pass


class EmptyGridAfterBudget(LRwBinsError):
    pass


class VersionMismatch(LRwBinsError):
    pass


class CorruptTable(LRwBinsError):
    pass


class RpcError(LRwBinsError):
    pass


class Timeout(RpcError):
    pass


class Disconnected(RpcError):
    pass


class BindFailed(RpcError):
    pass


class ServerError(RpcError):
    pass
