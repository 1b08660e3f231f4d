"""
Chain Exceptions
================
"""

from typing import Optional


class ChainError(Exception):
    """Base exception for chain manager errors."""
    detail: str = "Chain manager error"

    def __init__(self, detail: Optional[str] = None):
        self.detail = detail or self.__class__.detail
        super().__init__(self.detail)


class BadWiring(ChainError):
    """Raised when a template's wiring is not a simple path over its stages."""
    detail = "Chain wiring must be a simple path"


class UnknownTemplate(ChainError):
    """Raised when a template id was never loaded."""
    detail = "Unknown chain template"


class FaultedInstance(ChainError):
    """Raised when a faulted instance is handed to restore."""
    detail = "Chain instance faulted; it must be rebuilt"


class RegistryFailure(ChainError):
    """Raised when an FWP's init or postinit failed while building an instance."""
    detail = "FWP initialization failed"
