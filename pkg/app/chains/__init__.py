"""
Chains Module
=============

Chain templates, post-init checkpoints, the chain cache, activation and
restore.
"""

from .cache import CacheStats, ChainCache
from .exceptions import BadWiring, ChainError, FaultedInstance, RegistryFailure, UnknownTemplate
from .manager import ChainManager
from .models import ChainImage, ChainInstance, ChainState, ChainTemplate, FwpImage, StageSpec

__all__ = [
    "ChainManager",
    "ChainCache",
    "CacheStats",
    # Models
    "ChainTemplate",
    "StageSpec",
    "ChainInstance",
    "ChainState",
    "ChainImage",
    "FwpImage",
    # Exceptions
    "ChainError",
    "BadWiring",
    "UnknownTemplate",
    "FaultedInstance",
    "RegistryFailure",
]
