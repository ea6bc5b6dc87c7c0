from __future__ import annotations

from typing import Any, Dict


class LinelocError(ValueError):
    """Error identified by a catalog key; params fill the translated message."""

    def __init__(self, key: str, **params: Any) -> None:
        super().__init__(key)
        self.key = key
        self.params: Dict[str, Any] = params


class ConfigError(LinelocError):
    pass


class MapFormatError(LinelocError):
    pass


class ReplayFormatError(LinelocError):
    pass


class DegeneracyExceeded(LinelocError):
    pass
