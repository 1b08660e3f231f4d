"""
Local Heap
==========

Fixed-size contiguous arena backing an FWP's local memory.

The break only moves up within one activation. Everything above the break is
zero: a fresh arena is zero-filled and restore scrubs up to the high-water
mark, so sbrk never has to clear memory itself.
"""

import numpy as np

from .exceptions import HeapExhausted

ALIGN = 16
GUARD_BYTES = 64
GUARD_PATTERN = 0xA5


def align_up(size: int, align: int = ALIGN) -> int:
    return (size + align - 1) & ~(align - 1)


class Arena:
    """
    Contiguous byte arena with a break offset and guard bands on both ends.

    Attributes:
        size: Usable bytes
        brk: Current break (offset of the next allocation)
        high_water: Highest break reached since the last restore
    """

    def __init__(self, size: int):
        if size < ALIGN:
            raise ValueError(f"arena size must be at least {ALIGN} bytes, got {size}")
        self.size = align_up(size)
        self._raw = np.zeros(self.size + 2 * GUARD_BYTES, dtype=np.uint8)
        self._raw[:GUARD_BYTES] = GUARD_PATTERN
        self._raw[-GUARD_BYTES:] = GUARD_PATTERN
        self.memory = self._raw[GUARD_BYTES:GUARD_BYTES + self.size]
        self.brk = 0
        self.high_water = 0

    def sbrk(self, size: int) -> int:
        """
        Advance the break by `size` rounded up to 16 bytes.

        Returns:
            The previous break

        Raises:
            HeapExhausted: The arena cannot hold the request
        """
        if size <= 0:
            raise ValueError(f"sbrk size must be positive, got {size}")
        step = align_up(size)
        if self.brk + step > self.size:
            raise HeapExhausted(f"sbrk({size}) at break {self.brk} exceeds arena of {self.size} bytes")
        offset = self.brk
        self.brk += step
        self.high_water = max(self.high_water, self.brk)
        return offset

    def view(self, offset: int, nbytes: int, dtype=np.uint8) -> np.ndarray:
        """Typed view over allocated bytes [offset, offset + nbytes)."""
        if offset < 0 or offset + nbytes > self.brk:
            raise HeapExhausted(f"view [{offset}, {offset + nbytes}) outside break {self.brk}")
        return self.memory[offset:offset + nbytes].view(dtype)

    # ────────────────────────────────
    # Checkpoint / restore
    # ────────────────────────────────

    def image(self) -> np.ndarray:
        """Bytes below the break (the checkpoint image)."""
        return self.memory[: self.brk]

    def restore(self, image: np.ndarray) -> int:
        """
        Rewrite the arena from a checkpoint image.

        Bytes below the image end are copied back, bytes between the image
        end and the high-water mark are zeroed.

        Returns:
            Bytes written (copied plus zeroed)
        """
        brk = len(image)
        self.memory[:brk] = image
        dirty = max(self.high_water, brk)
        self.memory[brk:dirty] = 0
        self.brk = brk
        self.high_water = brk
        return dirty

    def residual_bytes(self) -> int:
        """Non-zero bytes above the break; 0 after a correct restore."""
        return int(np.count_nonzero(self.memory[self.brk:]))

    def guards_intact(self) -> bool:
        return bool(
            np.all(self._raw[:GUARD_BYTES] == GUARD_PATTERN)
            and np.all(self._raw[-GUARD_BYTES:] == GUARD_PATTERN)
        )
