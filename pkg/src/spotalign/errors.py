"""Error types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs that break its documented contract."""


class UnknownTokenError(ContractViolation):
    """A word or gene symbol is not present in the fixed vocabulary."""


class InputMismatch(ContractViolation):
    """Provided inputs (checkpoint, corpus, config) disagree with each other."""


class NumericError(ArithmeticError):
    """A computation produced NaN/Inf or an otherwise unusable numeric result."""
