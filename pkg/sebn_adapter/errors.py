class ContractError(RuntimeError):
    """A precondition of an operation or file format was violated."""


class ShapeError(ContractError):
    pass


class NonFiniteError(ContractError):
    pass


class ConfigError(ContractError):
    pass


class CorpusError(ContractError):
    pass


class CheckpointError(ContractError):
    pass


class TrialError(ContractError):
    pass


class UsageError(ContractError):
    """Bad command-line arguments."""
