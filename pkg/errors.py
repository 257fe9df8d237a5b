"""
Exception hierarchy shared by every HuntFuzz module
"""

from typing import Optional


class HuntFuzzError(Exception):
    """Base class for all framework errors"""


class ConfigError(HuntFuzzError):
    """Invalid configuration value or combination"""


class UsageError(HuntFuzzError):
    """Invalid command-line usage"""


class GraphMembershipError(HuntFuzzError):
    """A block id that does not belong to the queried Cfg"""

    def __init__(self, block):
        super().__init__(f"block {block!r} is not part of this graph")
        self.block = block


class CfgLoadError(HuntFuzzError):
    """Malformed or invalid DOT input"""

    def __init__(self, message: str, line: Optional[int] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


class IRParseError(HuntFuzzError):
    """Syntax error in IR text"""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class IRValidationError(HuntFuzzError):
    """Structurally invalid program"""

    def __init__(self, message: str, label: str):
        super().__init__(f"{label}: {message}")
        self.label = label


class DerivationError(HuntFuzzError):
    """Cfg derivation exceeded its block budget"""


class ProtocolError(HuntFuzzError):
    """Scheduler event delivered in the wrong phase"""


class GenerationError(HuntFuzzError):
    """Generator shape cannot be satisfied"""
