"""Fixed-width bit packing used for table and header size accounting."""

from __future__ import annotations


def width(max_value: int) -> int:
    """Bits needed to store any integer in ``[0, max_value]``."""
    if max_value < 0:
        raise ValueError("max_value must be non-negative")
    return max(1, int(max_value).bit_length())


def clog2(x: float) -> int:
    """ceil(log2(x)) for x >= 1, 0 below."""
    if x <= 1:
        return 0
    return (int(x) - 1).bit_length() if float(x).is_integer() else int(x).bit_length()


class BitWriter:
    def __init__(self) -> None:
        self._value = 0
        self.nbits = 0

    def write(self, value: int, nbits: int) -> None:
        if value < 0 or value >> nbits:
            raise ValueError(f"{value} does not fit in {nbits} bits")
        self._value = (self._value << nbits) | value
        self.nbits += nbits

    def to_bytes(self) -> bytes:
        pad = (-self.nbits) % 8
        return ((self._value << pad).to_bytes((self.nbits + pad) // 8, "big")
                if self.nbits else b"")


class BitReader:
    def __init__(self, data: bytes, nbits: int) -> None:
        self._value = int.from_bytes(data, "big") >> ((-nbits) % 8)
        self._left = nbits

    def read(self, nbits: int) -> int:
        if nbits > self._left:
            raise ValueError("read past end of bit stream")
        self._left -= nbits
        return (self._value >> self._left) & ((1 << nbits) - 1)

    @property
    def remaining(self) -> int:
        return self._left
