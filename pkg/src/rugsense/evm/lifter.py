"""Lift bytecode to a semantic code graph (basic blocks + control-flow and data-dependency edges).

Jumps are resolved by abstract stack simulation over symbolic values. Every
stack-producing instruction defines one value whose id is derived from its
offset, so a statement's value id is stable across the contexts in which the
block is visited. Exploration is keyed by ``(block, function, stack, memory)``
and carries the enclosing public function (recognised from the dispatcher), so
facts are recorded per function without cross-function merging.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

from .disasm import Bytecode, Instruction, disassemble, strip_metadata
from .opcodes import BY_NAME, HALTS, TERMINATORS, push_width

WORD = 1 << 256
MASK = WORD - 1
SINK = -1
DISPATCHER = None  # function key for code outside any recognised public function


@dataclass(frozen=True, eq=False)
class Value:
    """A symbolic stack value. ``id`` names the defining statement."""

    id: str
    op: str
    const: int | None = None
    args: tuple["Value", ...] = ()
    tag: str | None = None
    # SHA3 operands (memory words hashed), in memory order.
    mem: tuple["Value", ...] = ()

    def __repr__(self) -> str:
        c = f"={self.const:#x}" if self.const is not None else ""
        t = f"<{self.tag}>" if self.tag else ""
        return f"{self.id}:{self.op}{t}{c}"


def fn_sort_key(fn: int | None) -> tuple[int, int]:
    return (0, 0) if fn is None else (1, fn)


def value_id(offset: int) -> str:
    return f"v{offset:x}"


def def_offset(vid: str) -> int | None:
    if vid.startswith("v"):
        try:
            return int(vid[1:], 16)
        except ValueError:
            return None
    return None


@dataclass(frozen=True)
class Stmt:
    """Three-address fact for one executed instruction (deduplicated across contexts)."""

    offset: int
    block: int
    op: str
    uses: tuple[str, ...] = ()
    consts: tuple[int | None, ...] = ()
    defs: str | None = None
    # Values read through memory (SHA3 operands, MLOAD of a known word).
    mem_uses: tuple[str, ...] = ()

    def all_uses(self) -> tuple[str, ...]:
        return self.uses + self.mem_uses

    def sort_key(self) -> tuple:
        return (
            self.offset,
            self.uses,
            tuple(-1 if c is None else c for c in self.consts),
            self.defs or "",
            self.mem_uses,
        )


@dataclass(frozen=True)
class SlotRef:
    kind: str  # "var" | "map" | "map2" | "dyn"
    base: int | None = None
    key: str | None = None

    def sort_key(self) -> tuple:
        return (self.kind, -1 if self.base is None else self.base, self.key or "")

    def storage_node(self) -> str:
        if self.kind in ("var", "map", "map2"):
            return f"st:{self.kind}:{self.base:#x}"
        return "st:dyn"

    def __str__(self) -> str:
        if self.kind == "var":
            return f"var:{self.base:#x}"
        if self.kind in ("map", "map2"):
            return f"{self.kind}:{self.base:#x}[{self.key}]"
        return f"dyn[{self.key}]"


@dataclass(frozen=True)
class StorageAccess:
    fn: int | None
    block: int
    offset: int
    kind: str  # "load" | "store"
    slot: SlotRef
    value: str  # loaded value id, or stored value id

    def sort_key(self) -> tuple:
        return (fn_sort_key(self.fn), self.offset, self.kind, self.slot.sort_key(), self.value)


@dataclass
class BasicBlock:
    id: int
    instructions: list[Instruction]
    function: int | None = None
    defs: dict[int, str] = field(default_factory=dict)
    uses: dict[int, tuple[str, ...]] = field(default_factory=dict)
    malformed: bool = False

    @property
    def start(self) -> int:
        return self.id

    @property
    def end(self) -> int:
        if not self.instructions:
            return self.id
        last = self.instructions[-1]
        return last.offset + len(last.raw)

    @property
    def opcodes(self) -> list[str]:
        return [ins.opcode for ins in self.instructions]

    @property
    def last(self) -> Instruction | None:
        return self.instructions[-1] if self.instructions else None


@dataclass
class SemanticCodeGraph:
    blocks: dict[int, BasicBlock]
    cf_edges: list[tuple[int, int]]
    dd_edges: list[tuple[int, int]]
    functions: dict[int, int]
    storage_accesses: list[StorageAccess]
    statements: dict[int | None, list[Stmt]]
    fn_edges: dict[int | None, list[tuple[int, int]]]
    fn_blocks: dict[int | None, list[int]]
    invocation_blocks: set[int]
    diagnostics: dict[str, int]

    def successors(self, block: int) -> list[int]:
        return [b for a, b in self.cf_edges if a == block]

    def edges(self) -> list[tuple[int, int]]:
        """Union of control-flow and data-dependency edges, sorted."""
        return sorted(set(self.cf_edges) | set(self.dd_edges))

    def block_of(self, offset: int) -> int | None:
        for b in self.blocks.values():
            if b.instructions and b.start <= offset < b.end:
                return b.id
        return None

    def to_json(self) -> dict:
        return {
            "blocks": [
                {
                    "id": b.id,
                    "offsets": [ins.offset for ins in b.instructions],
                    "opcodes": b.opcodes,
                }
                for b in self.blocks.values()
            ],
            "cf_edges": [list(e) for e in self.cf_edges],
            "dd_edges": [list(e) for e in self.dd_edges],
            "functions": {f"{sel:#010x}": blk for sel, blk in sorted(self.functions.items())},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# ---------------------------------------------------------------------------
# basic blocks


def split_blocks(instructions: list[Instruction]) -> list[BasicBlock]:
    """Partition a disassembly into maximal basic blocks."""
    blocks: list[BasicBlock] = []
    cur: list[Instruction] = []
    for ins in instructions:
        if ins.opcode == "JUMPDEST" and cur:
            blocks.append(BasicBlock(cur[0].offset, cur))
            cur = []
        cur.append(ins)
        if ins.opcode in TERMINATORS:
            blocks.append(BasicBlock(cur[0].offset, cur))
            cur = []
    if cur:
        blocks.append(BasicBlock(cur[0].offset, cur))
    return blocks


# ---------------------------------------------------------------------------
# stack simulation


class StackUnderflow(Exception):
    pass


def _signed(x: int) -> int:
    return x - WORD if x >> 255 else x


def _fold(op: str, c: list[int]) -> int | None:
    a = c[0]
    b = c[1] if len(c) > 1 else 0
    if op == "ADD":
        return (a + b) & MASK
    if op == "SUB":
        return (a - b) & MASK
    if op == "MUL":
        return (a * b) & MASK
    if op == "DIV":
        return a // b if b else 0
    if op == "MOD":
        return a % b if b else 0
    if op == "EXP":
        return pow(a, b, WORD)
    if op == "AND":
        return a & b
    if op == "OR":
        return a | b
    if op == "XOR":
        return a ^ b
    if op == "NOT":
        return MASK ^ a
    if op == "SHL":
        return (b << a) & MASK if a < 256 else 0
    if op == "SHR":
        return b >> a if a < 256 else 0
    if op == "EQ":
        return int(a == b)
    if op == "LT":
        return int(a < b)
    if op == "GT":
        return int(a > b)
    if op == "SLT":
        return int(_signed(a) < _signed(b))
    if op == "SGT":
        return int(_signed(a) > _signed(b))
    if op == "ISZERO":
        return int(a == 0)
    if op == "BYTE":
        return (b >> (8 * (31 - a))) & 0xFF if a < 32 else 0
    return None


FOLDABLE = frozenset(
    "ADD SUB MUL DIV MOD EXP AND OR XOR NOT SHL SHR EQ LT GT SLT SGT ISZERO BYTE".split()
)
MEM_CLOBBER = frozenset(
    "MSTORE8 CALLDATACOPY CODECOPY EXTCODECOPY RETURNDATACOPY MCOPY CALL CALLCODE DELEGATECALL STATICCALL".split()
)


@dataclass
class SimResult:
    exit_stack: tuple[Value, ...]
    memory: tuple[tuple[int, Value], ...]
    stmts: list[Stmt]
    storage: list[tuple[int, str, SlotRef, str]]
    jump_target: Value | None = None
    jump_cond: Value | None = None
    malformed: bool = False
    pushed: tuple[Value, ...] = ()

    @property
    def top(self) -> Value | None:
        return self.exit_stack[-1] if self.exit_stack else None


def strip_mask(v: Value) -> Value:
    """Look through AND-with-constant masks (address / bool normalisation)."""
    seen = 0
    while v.op == "AND" and len(v.args) == 2 and seen < 8:
        a, b = v.args
        if a.const is not None and b.const is None:
            v = b
        elif b.const is not None and a.const is None:
            v = a
        else:
            break
        seen += 1
    return v


def slot_ref(slot: Value) -> SlotRef:
    if slot.const is not None:
        return SlotRef("var", slot.const)
    if slot.op == "SHA3" and len(slot.mem) == 2:
        key, base = slot.mem
        k = strip_mask(key).id
        if base.const is not None:
            return SlotRef("map", base.const, k)
        if base.op == "SHA3" and len(base.mem) == 2 and base.mem[1].const is not None:
            return SlotRef("map2", base.mem[1].const, k)
    return SlotRef("dyn", None, slot.id)


def stack_simulate(
    block: BasicBlock,
    entry_stack: Iterable[Value] = (),
    memory: dict[int, Value] | None = None,
) -> SimResult:
    """Run one block over an abstract stack.

    Returns the exit stack, memory words at constant offsets, and def/use facts.
    A stack underflow marks the result malformed (facts are discarded by callers).
    """
    stack: list[Value] = list(entry_stack)
    mem: dict[int, Value] = dict(memory or {})
    stmts: list[Stmt] = []
    storage: list[tuple[int, str, SlotRef, str]] = []
    pushed: list[Value] = []
    res = SimResult((), (), stmts, storage)

    def pop(n: int) -> list[Value]:
        if len(stack) < n:
            raise StackUnderflow
        out = stack[len(stack) - n :][::-1]
        del stack[len(stack) - n :]
        return out

    try:
        for ins in block.instructions:
            op = ins.opcode
            off = ins.offset
            vid = value_id(off)
            if op == "JUMPDEST":
                continue
            if op.startswith("PUSH"):
                v = Value(vid, op, ins.value if op != "PUSH0" else 0)
                stack.append(v)
                pushed.append(v)
                stmts.append(Stmt(off, block.id, op, (), (), vid))
                continue
            if op.startswith("DUP"):
                k = int(op[3:])
                if len(stack) < k:
                    raise StackUnderflow
                stack.append(stack[-k])
                continue
            if op.startswith("SWAP"):
                k = int(op[4:])
                if len(stack) < k + 1:
                    raise StackUnderflow
                stack[-1], stack[-k - 1] = stack[-k - 1], stack[-1]
                continue
            if op == "POP":
                pop(1)
                continue
            info = BY_NAME[op] if ins.known else BY_NAME["INVALID"]
            args = pop(info.pops)
            uses = tuple(a.id for a in args)
            consts = tuple(a.const for a in args)
            mem_uses: tuple[str, ...] = ()
            out: Value | None = None
            if op == "JUMP":
                res.jump_target = args[0]
            elif op == "JUMPI":
                res.jump_target, res.jump_cond = args[0], args[1]
            if info.pushes:
                const = None
                tag = None
                hashed: tuple[Value, ...] = ()
                if op in FOLDABLE and all(c is not None for c in consts):
                    const = _fold(op, list(consts))  # type: ignore[arg-type]
                elif op == "CALLDATALOAD":
                    c = consts[0]
                    if c == 0:
                        tag = "selector"
                    elif c is not None and c >= 4 and (c - 4) % 32 == 0:
                        tag = f"arg{(c - 4) // 32}"
                elif op == "SHA3":
                    o, size = consts
                    if o is not None and size is not None and size % 32 == 0 and 0 < size <= 0x200:
                        words = [mem.get(o + i) for i in range(0, size, 32)]
                        if all(w is not None for w in words):
                            hashed = tuple(words)  # type: ignore[arg-type]
                            mem_uses = tuple(w.id for w in hashed)
                elif op == "MLOAD":
                    o = consts[0]
                    if o is not None and o in mem:
                        hashed = (mem[o],)
                        mem_uses = (mem[o].id,)
                out = Value(vid, op, const, tuple(args), tag, hashed)
                stack.append(out)
                if len(stack) > 1024:
                    raise StackUnderflow
            if op == "MSTORE":
                o = consts[0]
                if o is None:
                    mem.clear()
                else:
                    for k in [k for k in mem if abs(k - o) < 32 and k != o]:
                        del mem[k]
                    mem[o] = args[1]
            elif op in MEM_CLOBBER:
                mem.clear()
            elif op == "SLOAD":
                storage.append((off, "load", slot_ref(args[0]), vid))
            elif op == "SSTORE":
                storage.append((off, "store", slot_ref(args[0]), args[1].id))
            stmts.append(Stmt(off, block.id, op, uses, consts, out.id if out else None, mem_uses))
    except StackUnderflow:
        res.malformed = True
    res.exit_stack = tuple(stack)
    res.memory = tuple(sorted(mem.items()))
    res.pushed = tuple(pushed)
    return res


# ---------------------------------------------------------------------------
# graph construction


def _selector_eq(cond: Value) -> int | None:
    """Selector constant if ``cond`` is EQ(PUSH4 sel, f(calldata[0:4]))."""
    if cond.op != "EQ" or len(cond.args) != 2:
        return None
    a, b = cond.args
    for lit, other in ((a, b), (b, a)):
        if lit.op == "PUSH4" and lit.const is not None and _derives_from_selector(other):
            return lit.const
    return None


def _derives_from_selector(v: Value, depth: int = 4) -> bool:
    if v.tag == "selector":
        return True
    if depth == 0:
        return False
    return any(_derives_from_selector(a, depth - 1) for a in v.args if a.const is None)


def _key(block: int, fn: int | None, stack: tuple[Value, ...], memory: tuple[tuple[int, Value], ...]):
    return (
        block,
        fn,
        tuple((v.id, v.const) for v in stack),
        tuple((o, v.id, v.const) for o, v in memory),
    )


def build_scg(
    code: Bytecode | bytes,
    max_contexts: int = 12,
    max_states: int = 50_000,
) -> SemanticCodeGraph:
    """Recover blocks, resolve jumps and emit the semantic code graph.

    Pure: identical input bytes always yield an identical graph.
    """
    raw = code.data if isinstance(code, Bytecode) else bytes(code)
    stripped = strip_metadata(raw)
    instrs = disassemble(stripped)
    all_blocks = split_blocks(instrs)
    by_id = {b.id: b for b in all_blocks}
    order = [b.id for b in all_blocks]
    next_block = {a: b for a, b in zip(order, order[1:])}
    jumpdests = {ins.offset for ins in instrs if ins.opcode == "JUMPDEST"}
    block_at = {}
    for b in all_blocks:
        for ins in b.instructions:
            block_at[ins.offset] = b.id

    diag = {
        "metadata_bytes_stripped": len(raw) - len(stripped),
        "truncated_pushes": sum(
            1 for ins in instrs if push_width(ins.opcode) and len(ins.raw) < 1 + push_width(ins.opcode)
        ),
        "unresolved_jumps": 0,
        "invalid_jump_targets": 0,
        "malformed_blocks": 0,
        "contexts_capped": 0,
        "states": 0,
    }

    visited_keys: set = set()
    ctx_count: dict[tuple[int, int | None], int] = {}
    cf: set[tuple[int, int]] = set()
    fn_edges: dict[int | None, set[tuple[int, int]]] = {}
    fn_blocks: dict[int | None, set[int]] = {}
    stmts: dict[int | None, set[Stmt]] = {}
    storage: set[StorageAccess] = set()
    functions: dict[int, int] = {}
    invocation: set[int] = set()
    malformed: set[int] = set()
    unresolved: set[int] = set()
    reached: set[int] = set()

    work: list[tuple[int, int | None, tuple[Value, ...], tuple[tuple[int, Value], ...]]] = [(0, DISPATCHER, (), ())]
    while work:
        bid, fn, stack, memory = work.pop()
        key = _key(bid, fn, stack, memory)
        if key in visited_keys:
            continue
        if diag["states"] >= max_states:
            diag["contexts_capped"] += 1
            continue
        n = ctx_count.get((bid, fn), 0)
        if n >= max_contexts:
            diag["contexts_capped"] += 1
            continue
        ctx_count[(bid, fn)] = n + 1
        visited_keys.add(key)
        diag["states"] += 1
        block = by_id[bid]
        reached.add(bid)
        fn_blocks.setdefault(fn, set()).add(bid)
        sim = stack_simulate(block, stack, dict(memory))
        if sim.malformed:
            malformed.add(bid)
            continue
        stmts.setdefault(fn, set()).update(sim.stmts)
        for off, kind, slot, val in sim.storage:
            storage.add(StorageAccess(fn, bid, off, kind, slot, val))

        last = block.last
        op = last.opcode if last else "STOP"
        succs: list[tuple[int, int | None]] = []

        def resolve(target: Value) -> int | None:
            if target.const is None:
                unresolved.add(bid)
                return SINK
            if target.const not in jumpdests:
                diag["invalid_jump_targets"] += 1
                return None
            return target.const

        if op == "JUMP":
            tgt = resolve(sim.jump_target)  # type: ignore[arg-type]
            if tgt is not None:
                succs.append((tgt, fn))
            if tgt not in (None, SINK):
                ret = [
                    v
                    for v in sim.exit_stack
                    if v.op.startswith("PUSH")
                    and v.const in jumpdests
                    and v.const != tgt
                    and (def_offset(v.id) or -1) >= block.start
                    and (def_offset(v.id) or -1) < block.end
                ]
                if ret:
                    invocation.add(bid)
        elif op == "JUMPI":
            cond = sim.jump_cond
            tgt = resolve(sim.jump_target)  # type: ignore[arg-type]
            taken_fn = fn
            if fn is DISPATCHER and cond is not None and tgt not in (None, SINK):
                sel = _selector_eq(cond)
                if sel is not None:
                    functions.setdefault(sel, tgt)  # type: ignore[arg-type]
                    taken_fn = sel
            if bid in next_block:
                succs.append((next_block[bid], fn))
            if tgt is not None:
                succs.append((tgt, taken_fn))
        elif op not in HALTS and bid in next_block:
            succs.append((next_block[bid], fn))

        for s, sfn in succs:
            cf.add((bid, s))
            fn_edges.setdefault(fn, set()).add((bid, s))
            if s != SINK:
                work.append((s, sfn, sim.exit_stack, sim.memory))

    # assemble blocks (reachable only)
    blocks: dict[int, BasicBlock] = {}
    for bid in sorted(reached):
        src = by_id[bid]
        owners = sorted(f for f, bs in fn_blocks.items() if f is not None and bid in bs)
        blocks[bid] = BasicBlock(bid, src.instructions, owners[0] if owners else None, malformed=bid in malformed)
    if unresolved:
        blocks[SINK] = BasicBlock(SINK, [])
        blocks = dict(sorted(blocks.items()))
    diag["unresolved_jumps"] = len(unresolved)
    diag["malformed_blocks"] = len(malformed)
    diag["unreachable_blocks"] = len(all_blocks) - len(reached)

    all_stmts = sorted({s for ss in stmts.values() for s in ss}, key=Stmt.sort_key)
    def_block: dict[str, int] = {}
    for s in all_stmts:
        if s.defs is not None:
            def_block[s.defs] = s.block
            blocks[s.block].defs[s.offset] = s.defs
    uses_acc: dict[int, set[str]] = {}
    dd: set[tuple[int, int]] = set()
    for s in all_stmts:
        uses_acc.setdefault(s.offset, set()).update(s.all_uses())
        for u in s.all_uses():
            db = def_block.get(u)
            if db is not None and db != s.block:
                dd.add((db, s.block))
    for off, us in uses_acc.items():
        b = block_at[off]
        if b in blocks:
            blocks[b].uses[off] = tuple(sorted(us))

    return SemanticCodeGraph(
        blocks=blocks,
        cf_edges=sorted(cf),
        dd_edges=sorted(dd),
        functions=dict(sorted(functions.items())),
        storage_accesses=sorted(storage, key=StorageAccess.sort_key),
        statements={fn: sorted(stmts[fn], key=Stmt.sort_key) for fn in sorted(stmts, key=fn_sort_key)},
        fn_edges={fn: sorted(fn_edges[fn]) for fn in sorted(fn_edges, key=fn_sort_key)},
        fn_blocks={fn: sorted(fn_blocks[fn]) for fn in sorted(fn_blocks, key=fn_sort_key)},
        invocation_blocks=invocation,
        diagnostics=diag,
    )
