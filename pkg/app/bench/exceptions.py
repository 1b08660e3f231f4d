"""
Bench Exceptions
================

Errors that surface at the command line carry the process exit code.
"""

from typing import Optional


class BenchError(Exception):
    """Base exception for the benchmark harness."""
    detail: str = "Benchmark error"
    exit_code: int = 1

    def __init__(self, detail: Optional[str] = None):
        self.detail = detail or self.__class__.detail
        super().__init__(self.detail)


class ConfigError(BenchError):
    """Raised when a scenario file does not parse or validate."""
    detail = "Invalid scenario configuration"
    exit_code = 2


class RuntimeFault(BenchError):
    """Raised when a scenario aborts; names the failing module."""
    detail = "Scenario runtime fault"
    exit_code = 3

    def __init__(self, module: str, detail: Optional[str] = None):
        self.module = module
        super().__init__(f"[{module}] {detail or self.__class__.detail}")
