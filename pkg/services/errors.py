"""
Exception hierarchy shared by the services, the CLI and the HTTP routers
"""
from typing import Any, Dict, Optional


class DereverbError(Exception):
    """Base class for every failure the pipeline reports on purpose"""

    exit_code = 1


class ConfigurationError(DereverbError, ValueError):
    """Bad configuration, usage or incompatible options (exit code 1)"""

    exit_code = 1


class AudioDataError(DereverbError, ValueError):
    """Missing, unreadable or inconsistent audio / manifest data (exit code 2)"""

    exit_code = 2


class NumericalInstabilityError(DereverbError):
    """Non-finite values during sampling or training (exit code 3)"""

    exit_code = 3

    def __init__(self, message: str, step: Optional[int] = None,
                 diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics or {}
