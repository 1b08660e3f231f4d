"""
Arena-backed Counters
=====================

Named uint64 counters living in an FWP's arena, so a chain restore resets
them together with the rest of the application state.
"""

from typing import TYPE_CHECKING, Dict, Sequence

import numpy as np

if TYPE_CHECKING:
    from app.fwp import FwpInstance


class ArenaCounters:
    """
    Usage:
        self.counters = ArenaCounters(fwp, ("received", "dropped"))
        ...
        self.counters.add(fwp, "dropped")
    """

    def __init__(self, fwp: "FwpInstance", names: Sequence[str]):
        self.names = tuple(names)
        self._index = {name: i for i, name in enumerate(self.names)}
        self.offset = fwp.eos_sbrk(8 * len(self.names))

    def view(self, fwp: "FwpInstance") -> np.ndarray:
        return fwp.heap.view(self.offset, 8 * len(self.names), np.uint64)

    def add(self, fwp: "FwpInstance", name: str, amount: int = 1) -> int:
        values = self.view(fwp)
        values[self._index[name]] += amount
        return int(values[self._index[name]])

    def read(self, fwp: "FwpInstance") -> Dict[str, int]:
        values = self.view(fwp)
        return {name: int(values[i]) for i, name in enumerate(self.names)}
