"""Bytecode container and linear-sweep disassembler."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

from .opcodes import OPCODES, push_width

log = logging.getLogger(__name__)


class BytecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Bytecode:
    data: bytes
    source: Literal["fixture-file", "rpc-fetch"] = "fixture-file"

    def __post_init__(self) -> None:
        if not self.data:
            raise BytecodeError("empty bytecode")

    @classmethod
    def from_hex(cls, text: str, source: Literal["fixture-file", "rpc-fetch"] = "fixture-file") -> "Bytecode":
        text = text.strip()
        if text[:2].lower() == "0x":
            text = text[2:]
        if not text:
            raise BytecodeError("empty bytecode")
        try:
            data = bytes.fromhex(text)
        except ValueError as exc:
            raise BytecodeError(f"invalid hex bytecode: {exc}") from None
        return cls(data, source)

    def hex(self) -> str:
        return "0x" + self.data.hex()


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode: str
    byte: int
    immediate: bytes | None = None
    # Bytes actually present in the input (shorter than 1 + width for a truncated PUSH).
    raw: bytes = field(default=b"", repr=False)
    known: bool = True

    @property
    def value(self) -> int | None:
        if self.immediate is None:
            return None
        return int.from_bytes(self.immediate, "big")

    @property
    def size(self) -> int:
        return len(self.raw)

    def __str__(self) -> str:
        if self.immediate is not None:
            return f"{self.offset:#06x} {self.opcode} {self.value:#x}"
        return f"{self.offset:#06x} {self.opcode}"


def strip_metadata(code: bytes) -> bytes:
    """Drop a trailing CBOR metadata blob if the solc length-suffix pattern is present."""
    if len(code) < 4:
        return code
    meta_len = int.from_bytes(code[-2:], "big")
    start = len(code) - 2 - meta_len
    if meta_len == 0 or start <= 0:
        return code
    header = code[start]
    # CBOR map with 1..15 entries; solc emits a2/a3/a4/a5.
    if not 0xA1 <= header <= 0xAF:
        return code
    return code[:start]


def disassemble(code: Bytecode | bytes, lenient: bool = True) -> list[Instruction]:
    """Linear sweep. Unknown bytes become INVALID markers that keep their byte."""
    data = code.data if isinstance(code, Bytecode) else bytes(code)
    if not data:
        raise BytecodeError("empty bytecode")
    out: list[Instruction] = []
    i = 0
    n = len(data)
    while i < n:
        b = data[i]
        info = OPCODES.get(b)
        if info is None:
            out.append(Instruction(i, "INVALID", b, None, data[i : i + 1], known=False))
            i += 1
            continue
        width = push_width(info.name)
        if width:
            raw = data[i : i + 1 + width]
            imm = raw[1:]
            if len(imm) < width:
                if not lenient:
                    raise BytecodeError(f"truncated {info.name} at offset {i}")
                log.warning("truncated %s at offset %d padded with zeros", info.name, i)
                imm = imm + b"\x00" * (width - len(imm))
            out.append(Instruction(i, info.name, b, imm, raw))
            i += len(raw)
        else:
            out.append(Instruction(i, info.name, b, None, data[i : i + 1]))
            i += 1
    return out


def reassemble(instructions: list[Instruction]) -> bytes:
    return b"".join(ins.raw for ins in instructions)
