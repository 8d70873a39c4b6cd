class NumericalError(ArithmeticError):
    """A numerical step failed: singular resolvent, defective eigenbasis, overflow."""
