"""A small two-pass EVM assembler plus a stack-tracking code builder.

Source syntax, one or more tokens per line::

    start:                 ; label, emits JUMPDEST
    PUSH1 0x80             ; explicit width
    PUSH 0x1234            ; minimal width
    PUSH @start            ; label reference, always PUSH2
    .bytes 0xdeadbeef      ; raw bytes

Comments start with ``;`` or ``#``.
"""

from __future__ import annotations

from .opcodes import BY_NAME, push_width


class AsmError(ValueError):
    pass


def _parse_int(tok: str) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(f"bad integer literal {tok!r}") from None


def _tokenize(source: str | list[str]) -> list[str]:
    lines = source.splitlines() if isinstance(source, str) else list(source)
    toks: list[str] = []
    for line in lines:
        for sep in (";", "#"):
            line = line.split(sep, 1)[0]
        toks.extend(line.split())
    return toks


def assemble(source: str | list[str]) -> bytes:
    toks = _tokenize(source)
    # (kind, payload): ("op", byte) | ("push", (width, int)) | ("label_ref", name) | ("raw", bytes)
    items: list[tuple[str, object]] = []
    labels: dict[str, int] = {}
    pos = 0
    i = 0
    while i < len(toks):
        tok = toks[i]
        i += 1
        if tok.endswith(":"):
            name = tok[:-1]
            if name in labels:
                raise AsmError(f"duplicate label {name!r}")
            labels[name] = pos
            items.append(("op", BY_NAME["JUMPDEST"].byte))
            pos += 1
            continue
        if tok == ".bytes":
            if i >= len(toks):
                raise AsmError(".bytes needs an argument")
            arg = toks[i]
            i += 1
            raw = bytes.fromhex(arg[2:] if arg.lower().startswith("0x") else arg)
            items.append(("raw", raw))
            pos += len(raw)
            continue
        name = tok.upper()
        if name == "PUSH" or (name.startswith("PUSH") and name != "PUSH0"):
            if i >= len(toks):
                raise AsmError(f"{name} needs an argument")
            arg = toks[i]
            i += 1
            if arg.startswith("@"):
                if name not in ("PUSH", "PUSH2"):
                    raise AsmError("label references use PUSH or PUSH2")
                items.append(("label_ref", arg[1:]))
                pos += 3
                continue
            value = _parse_int(arg)
            if value < 0:
                raise AsmError("negative push value")
            if name == "PUSH":
                width = max(1, (value.bit_length() + 7) // 8)
            else:
                if name not in BY_NAME:
                    raise AsmError(f"unknown opcode {tok!r}")
                width = push_width(name)
            if width > 32 or value >= 1 << (8 * width):
                raise AsmError(f"value {value:#x} does not fit in PUSH{width}")
            items.append(("push", (width, value)))
            pos += 1 + width
            continue
        if name not in BY_NAME:
            raise AsmError(f"unknown opcode {tok!r}")
        items.append(("op", BY_NAME[name].byte))
        pos += 1

    out = bytearray()
    for kind, payload in items:
        if kind == "op":
            out.append(payload)  # type: ignore[arg-type]
        elif kind == "raw":
            out += payload  # type: ignore[operator]
        elif kind == "push":
            width, value = payload  # type: ignore[misc]
            out.append(0x5F + width)
            out += value.to_bytes(width, "big")
        else:
            if payload not in labels:
                raise AsmError(f"undefined label {payload!r}")
            out.append(0x61)
            out += labels[payload].to_bytes(2, "big")  # type: ignore[index]
    return bytes(out)


ADDRESS_MASK = (1 << 160) - 1


class Builder:
    """Emits assembly while tracking named stack slots so DUP depths are computed.

    The tracked stack is a list of names (top last). Anything below what the
    builder knows about is represented by placeholder names set via ``reset``.
    """

    def __init__(self) -> None:
        self.lines: list[str] = []
        self.stack: list[str | None] = []
        self._fresh = 0

    # -- low level -------------------------------------------------------
    def emit(self, text: str) -> None:
        self.lines.append(text)

    def fresh(self, stem: str = "t") -> str:
        self._fresh += 1
        return f"{stem}{self._fresh}"

    def reset(self, stack: list[str | None]) -> None:
        self.stack = list(stack)

    def label(self, name: str, stack: list[str | None] | None = None) -> None:
        self.emit(f"{name}:")
        if stack is not None:
            self.reset(stack)

    def push(self, value: int, name: str | None = None, width: int | None = None) -> None:
        self.emit(f"PUSH{width or ''} {value:#x}")
        self.stack.append(name)

    def push_label(self, label: str, name: str | None = None) -> None:
        self.emit(f"PUSH @{label}")
        self.stack.append(name)

    def depth(self, name: str) -> int:
        for d, item in enumerate(reversed(self.stack), start=1):
            if item == name:
                return d
        raise AsmError(f"{name!r} not on tracked stack {self.stack}")

    def dup(self, name: str, as_: str | None = None) -> None:
        d = self.depth(name)
        if d > 16:
            raise AsmError(f"{name!r} too deep for DUP ({d})")
        self.emit(f"DUP{d}")
        self.stack.append(as_ if as_ is not None else name)

    def op(self, opcode: str, out: str | None = None) -> None:
        info = BY_NAME[opcode]
        self.emit(opcode)
        if info.pops:
            del self.stack[-info.pops :]
        if info.pushes:
            self.stack.append(out)

    def pop(self) -> None:
        self.op("POP")

    def pop_to(self, name: str) -> None:
        while self.stack and self.stack[-1] != name:
            self.pop()

    # -- idioms ----------------------------------------------------------
    def arg(self, index: int, name: str, address: bool = False) -> None:
        self.push(4 + 32 * index)
        self.op("CALLDATALOAD", out=name)
        if address:
            self.mask_address(name)

    def mask_address(self, name: str) -> None:
        self.push(ADDRESS_MASK, width=20)
        self.op("AND", out=name)

    def mapping_slot(self, key: str, base: int | str, out: str) -> None:
        """keccak256(key . base); ``base`` is a constant slot or a named nested slot."""
        self.dup(key)
        self.push(0)
        self.op("MSTORE")
        if isinstance(base, str):
            self.dup(base)
        else:
            self.push(base)
        self.push(0x20)
        self.op("MSTORE")
        self.push(0x40)
        self.push(0)
        self.op("SHA3", out=out)

    def sload(self, slot: str | int, out: str) -> None:
        if isinstance(slot, int):
            self.push(slot)
        else:
            self.dup(slot)
        self.op("SLOAD", out=out)

    def sstore(self, slot: str | int, value: str) -> None:
        self.dup(value)
        if isinstance(slot, int):
            self.push(slot)
        else:
            self.dup(slot)
        self.op("SSTORE")

    def binop(self, opcode: str, a: str, b: str, out: str) -> None:
        """out = a <op> b, with ``a`` as the top operand."""
        self.dup(b)
        self.dup(a)
        self.op(opcode, out=out)

    def require(self, cond: str) -> None:
        ok = self.fresh("ok")
        self.dup(cond)
        self.push_label(ok)
        self.op("JUMPI")
        saved = list(self.stack)
        self.revert()
        self.label(ok, saved)

    def require_not(self, cond: str) -> None:
        ok = self.fresh("ok")
        self.dup(cond)
        self.op("ISZERO")
        self.push_label(ok)
        self.op("JUMPI")
        saved = list(self.stack)
        self.revert()
        self.label(ok, saved)

    def revert(self) -> None:
        self.emit("PUSH1 0x00 DUP1 REVERT")

    def only_owner(self, owner_slot: int = 0) -> None:
        self.sload(owner_slot, "owner_")
        self.mask_address("owner_")
        self.op("CALLER", out="caller_")
        self.op("EQ", out="is_owner_")
        self.require("is_owner_")
        self.pop()

    def return_word(self, name: str) -> None:
        self.dup(name)
        self.push(0)
        self.op("MSTORE")
        self.emit("PUSH1 0x20 PUSH1 0x00 RETURN")

    def return_true(self) -> None:
        self.emit("PUSH1 0x01 PUSH1 0x00 MSTORE PUSH1 0x20 PUSH1 0x00 RETURN")

    def log3(self, topic0: int, data: str, topic1: str | int, topic2: str | int) -> None:
        self.dup(data)
        self.push(0)
        self.op("MSTORE")
        for t in (topic2, topic1):
            if isinstance(t, int):
                self.push(t)
            else:
                self.dup(t)
        self.push(topic0, width=32)
        self.push(0x20)
        self.push(0)
        self.op("LOG3")

    def source(self) -> str:
        return "\n".join(self.lines)

    def assemble(self) -> bytes:
        return assemble(self.source())
