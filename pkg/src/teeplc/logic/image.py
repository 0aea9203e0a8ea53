from __future__ import annotations

import struct
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ImageShape:
    input_bits: int = 8
    output_bits: int = 8
    input_words: int = 0
    output_words: int = 0


@dataclass
class ProcessImage:
    """PLC I/O memory. Bits are 0/1, words are raw unsigned 16-bit values."""

    input_bits: list = field(default_factory=list)
    output_bits: list = field(default_factory=list)
    input_words: list = field(default_factory=list)
    output_words: list = field(default_factory=list)

    @classmethod
    def zeros(cls, shape: ImageShape) -> "ProcessImage":
        return cls([0] * shape.input_bits, [0] * shape.output_bits,
                   [0] * shape.input_words, [0] * shape.output_words)

    @property
    def shape(self) -> ImageShape:
        return ImageShape(len(self.input_bits), len(self.output_bits),
                          len(self.input_words), len(self.output_words))

    def copy(self) -> "ProcessImage":
        return ProcessImage(list(self.input_bits), list(self.output_bits),
                            list(self.input_words), list(self.output_words))

    def to_bytes(self) -> bytes:
        """Compact wire form used for TA parameters and snapshots."""
        out = bytearray(struct.pack(">4H", *self.shape.__dict__.values()))
        for bits in (self.input_bits, self.output_bits):
            packed = bytearray((len(bits) + 7) // 8)
            for i, b in enumerate(bits):
                if b:
                    packed[i >> 3] |= 1 << (i & 7)
            out += packed
        for words in (self.input_words, self.output_words):
            out += struct.pack(f">{len(words)}H", *[w & 0xFFFF for w in words])
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProcessImage":
        ib, ob, iw, ow = struct.unpack(">4H", data[:8])
        pos = 8
        banks = []
        for n in (ib, ob):
            nbytes = (n + 7) // 8
            chunk = data[pos:pos + nbytes]
            banks.append([(chunk[i >> 3] >> (i & 7)) & 1 for i in range(n)])
            pos += nbytes
        for n in (iw, ow):
            banks.append(list(struct.unpack(f">{n}H", data[pos:pos + 2 * n])))
            pos += 2 * n
        if pos != len(data):
            raise ValueError("trailing bytes after process image")
        return cls(*banks)


def to_signed(word: int) -> int:
    word &= 0xFFFF
    return word - 0x10000 if word & 0x8000 else word


def to_unsigned(value: int) -> int:
    return value & 0xFFFF
