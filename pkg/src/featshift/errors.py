"""
Exception types for featshift

Every error raised on purpose by the package derives from FeatshiftError and
from the builtin a caller would naturally catch for that situation.
"""

from typing import Optional, Sequence, Tuple


class FeatshiftError(Exception):
    """Root of all featshift errors"""


class ShapeMismatchError(FeatshiftError, ValueError):
    """Operand shapes are incompatible for the requested operation"""

    def __init__(self, message: str, shapes: Sequence[Tuple[int, ...]] = ()):
        self.shapes = tuple(tuple(s) for s in shapes)
        if self.shapes:
            message = f"{message} (shapes: {', '.join(str(s) for s in self.shapes)})"
        super().__init__(message)


class DtypeMismatchError(FeatshiftError, ValueError):
    """Operands have different dtypes; featshift never casts implicitly"""


class NumericalDomainError(FeatshiftError, ArithmeticError):
    """An operation left its numerical domain (tiny divisor, non-finite result)"""

    def __init__(self, message: str, positions: Optional[Sequence[Tuple[int, ...]]] = None):
        self.positions = [tuple(int(i) for i in p) for p in (positions or [])]
        if self.positions:
            shown = ", ".join(str(p) for p in self.positions[:8])
            more = "" if len(self.positions) <= 8 else f" and {len(self.positions) - 8} more"
            message = f"{message} at positions {shown}{more}"
        super().__init__(message)


class EmptyReductionError(FeatshiftError, ValueError):
    """Reduction over no axes or over an empty extent"""


class GraphError(FeatshiftError, RuntimeError):
    """Misuse of the autodiff graph (non-scalar loss, consumed graph, ...)"""


class ConfigValidationError(FeatshiftError, ValueError):
    """Configuration value out of range or unknown key

    Attributes:
        key: Dotted path of the offending field (e.g. "augmentor.p")
    """

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class DatasetError(FeatshiftError, ValueError):
    """Invalid dataset request, unknown domain or malformed manifest"""


class OutputExistsError(FeatshiftError, FileExistsError):
    """Refusing to overwrite existing outputs without force"""
