"""Base and derived relations over a semantic code graph.

Everything is computed per public function context. Value-level data flow
(DF) is kept as def-use adjacency and queried by reachability instead of being
materialised as a closure.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from ..evm.lifter import SINK, SemanticCodeGraph, SlotRef, StorageAccess, Stmt, fn_sort_key
from ..evm.opcodes import ERC20_SELECTORS, TRANSFER_TOPIC

TRANSFER_SELECTORS = frozenset({ERC20_SELECTORS["transfer"], ERC20_SELECTORS["transferFrom"]})
TOTAL_SUPPLY_SELECTOR = ERC20_SELECTORS["totalSupply"]
BALANCE_OF_SELECTOR = ERC20_SELECTORS["balanceOf"]
ORDERING = frozenset({"LT", "GT", "SLT", "SGT"})


@dataclass
class FnView:
    """Statements and def-use structure of one function context."""

    fn: int | None
    entry: int
    stmts: list[Stmt]
    edges: list[tuple[int, int]]
    defs: dict[str, list[Stmt]] = field(default_factory=dict)
    users: dict[str, set[str]] = field(default_factory=dict)
    slots: dict[int, list[SlotRef]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for s in self.stmts:
            if s.defs is not None:
                self.defs.setdefault(s.defs, []).append(s)
                for u in s.all_uses():
                    self.users.setdefault(u, set()).add(s.defs)

    def ancestors(self, vid: str, stop: Callable[[Stmt], bool] | None = None) -> list[Stmt]:
        """Defining statements of ``vid`` and everything it was computed from.

        Traversal does not continue past statements for which ``stop`` holds
        (they are still reported).
        """
        seen = {vid}
        out: list[Stmt] = []
        queue = deque([vid])
        while queue:
            v = queue.popleft()
            for s in self.defs.get(v, ()):
                out.append(s)
                if stop is not None and stop(s):
                    continue
                for u in s.all_uses():
                    if u not in seen:
                        seen.add(u)
                        queue.append(u)
        return out

    def forward(self, seeds: Iterable[str]) -> set[str]:
        """Values reachable from ``seeds`` along DF."""
        out = set(seeds)
        queue = deque(out)
        while queue:
            v = queue.popleft()
            for w in self.users.get(v, ()):
                if w not in out:
                    out.add(w)
                    queue.append(w)
        return out

    def derives(self, vid: str, pred: Callable[[Stmt], bool], stop: Callable[[Stmt], bool] | None = None) -> Stmt | None:
        for s in self.ancestors(vid, stop):
            if pred(s):
                return s
        return None

    def strip(self, vid: str) -> Stmt | None:
        """Defining statement after looking through AND-with-constant masks."""
        for _ in range(8):
            ds = self.defs.get(vid)
            if not ds:
                return None
            s = ds[0]
            if s.op == "AND" and len(s.consts) == 2 and (s.consts[0] is None) != (s.consts[1] is None):
                vid = s.uses[0] if s.consts[0] is None else s.uses[1]
                continue
            return s
        return None


def is_arg(s: Stmt) -> bool:
    return s.op == "CALLDATALOAD" and s.consts[0] is not None and s.consts[0] >= 4 and (s.consts[0] - 4) % 32 == 0


def is_caller(s: Stmt) -> bool:
    return s.op == "CALLER"


def through_storage(s: Stmt) -> bool:
    return s.op in ("SHA3", "SLOAD")


@dataclass
class Guard:
    fn: int | None
    block: int
    offset: int
    pass_edge: tuple[int, int]


@dataclass
class Facts:
    scg: SemanticCodeGraph
    views: dict[int | None, FnView]
    revert_only: set[int]
    guards: list[Guard]
    guarded_stores: set[tuple[int | None, int]]  # (fn, offset)
    # basic relations
    df: dict[int | None, dict[str, set[str]]]
    vc: list[tuple[int | None, Stmt, str, str]]
    iz: list[tuple[int | None, Stmt, str]]
    ld: list[StorageAccess]
    st: list[StorageAccess]
    # advanced relations
    ptf: set[int | None]
    pfav: dict[int | None, set[str]]
    pumv: set[int]
    pumd: set[int]
    fumv: list[tuple[int | None, Stmt, str]]
    tv: set[tuple[int | None, int]]
    balance_bases: set[int]
    supply_slots: set[int]
    tainted: dict[int | None, set[str]]

    def privileged(self, fn: int | None) -> bool:
        """A function is privileged when it holds a guard and every store in it is guarded."""
        stores = [a for a in self.st if a.fn == fn]
        return any(g.fn == fn for g in self.guards) and bool(stores) and all(
            (fn, a.offset) in self.guarded_stores for a in stores
        )

    def owner_controlled(self, slot: SlotRef) -> bool:
        if slot.kind == "var":
            return slot.base in self.pumv
        if slot.kind in ("map", "map2"):
            return slot.base in self.pumd
        return False


# ---------------------------------------------------------------------------


def _revert_only(scg: SemanticCodeGraph) -> set[int]:
    succ: dict[int, list[int]] = {}
    for a, b in scg.cf_edges:
        succ.setdefault(a, []).append(b)
    out = {
        b.id
        for b in scg.blocks.values()
        if b.last is not None and b.last.opcode in ("REVERT", "INVALID")
    }
    changed = True
    while changed:
        changed = False
        for bid in scg.blocks:
            if bid in out or bid == SINK or bid not in succ:
                continue
            if all(s in out for s in succ[bid]):
                out.add(bid)
                changed = True
    return out


def _guard_parity(view: FnView, vid: str) -> int | None:
    """0/1 number of negations if ``vid`` is an owner or role check, else None."""
    parity = 0
    for _ in range(8):
        s = view.strip(vid)
        if s is None:
            return None
        if s.op == "ISZERO":
            parity ^= 1
            vid = s.uses[0]
            continue
        if s.op == "EQ":
            a, b = (view.strip(u) for u in s.uses)
            if a is None or b is None:
                return None
            if (a.op == "CALLER" and b.op == "SLOAD") or (b.op == "CALLER" and a.op == "SLOAD"):
                return parity
            return None
        if s.op == "SLOAD" and _role_slot(view, s):
            return parity
        return None
    return None


def _role_slot(view: FnView, sload: Stmt) -> bool:
    slot = view.defs.get(sload.uses[0])
    if not slot or slot[0].op != "SHA3" or not slot[0].mem_uses:
        return False
    key = view.strip(slot[0].mem_uses[0])
    return key is not None and key.op == "CALLER"


def _reachable(edges: Iterable[tuple[int, int]], start: int, banned: set[tuple[int, int]] = frozenset()) -> set[int]:
    succ: dict[int, list[int]] = {}
    for a, b in edges:
        if (a, b) not in banned:
            succ.setdefault(a, []).append(b)
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in succ.get(x, ()):
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return seen


def _jump_targets(scg: SemanticCodeGraph, view: FnView, jumpi: Stmt) -> tuple[int | None, int | None]:
    """(taken, fallthrough) successors of a JUMPI block within the function."""
    succs = sorted({b for a, b in view.edges if a == jumpi.block})
    taken = jumpi.consts[0]
    if taken not in succs:
        taken = None
    fall = next((b for b in succs if b != taken), None)
    return taken, fall


def derive_base_facts(scg: SemanticCodeGraph) -> Facts:
    entries = {sel: blk for sel, blk in scg.functions.items()}
    views: dict[int | None, FnView] = {}
    for fn in sorted(scg.statements, key=fn_sort_key):
        entry = 0 if fn is None else entries.get(fn)
        if entry is None:
            continue
        views[fn] = FnView(fn, entry, [s for s in scg.statements[fn] if not scg.blocks[s.block].malformed], scg.fn_edges.get(fn, []))
    for view in views.values():
        for acc in scg.storage_accesses:
            if acc.fn == view.fn:
                view.slots.setdefault(acc.offset, []).append(acc.slot)

    revert_only = _revert_only(scg)

    # privileged guards and the stores they protect
    guards: list[Guard] = []
    guarded: set[tuple[int | None, int]] = set()
    for fn, view in views.items():
        banned: set[tuple[int, int]] = set()
        for s in view.stmts:
            if s.op != "JUMPI" or len(s.uses) != 2:
                continue
            parity = _guard_parity(view, s.uses[1])
            if parity is None:
                continue
            taken, fall = _jump_targets(scg, view, s)
            if taken in revert_only and fall is not None and fall not in revert_only:
                pass_to = fall
            elif fall in revert_only and taken is not None and taken not in revert_only:
                pass_to = taken
            else:
                pass_to = taken if parity == 0 else fall
            if pass_to is None:
                continue
            g = Guard(fn, s.block, s.offset, (s.block, pass_to))
            guards.append(g)
            banned.add(g.pass_edge)
        open_blocks = _reachable(view.edges, view.entry, banned)
        for acc in scg.storage_accesses:
            if acc.fn == fn and acc.kind == "store" and acc.block not in open_blocks:
                guarded.add((fn, acc.offset))

    loads = [a for a in scg.storage_accesses if a.kind == "load" and a.fn in views]
    stores = [a for a in scg.storage_accesses if a.kind == "store" and a.fn in views]

    # privileged-controlled storage: written somewhere, and only under a guard
    var_stores: dict[int, list[bool]] = {}
    map_stores: dict[int, list[bool]] = {}
    for a in stores:
        bucket = var_stores if a.slot.kind == "var" else map_stores if a.slot.kind in ("map", "map2") else None
        if bucket is not None:
            bucket.setdefault(a.slot.base, []).append((a.fn, a.offset) in guarded)
    pumv = {base for base, gs in var_stores.items() if all(gs)}
    pumd = {base for base, gs in map_stores.items() if all(gs)}
    # a store to an untyped dynamic slot could alias anything; be conservative
    if any(a.slot.kind == "dyn" and (a.fn, a.offset) not in guarded for a in stores):
        pumv, pumd = set(), set()

    df = {fn: {k: set(v) for k, v in view.users.items()} for fn, view in views.items()}
    vc = []
    iz = []
    for fn, view in views.items():
        for s in view.stmts:
            if s.op in ORDERING and len(s.uses) == 2:
                vc.append((fn, s, s.uses[0], s.uses[1]))
            elif s.op == "ISZERO":
                iz.append((fn, s, s.uses[0]))

    pfav = {
        fn: {s.defs for s in view.stmts if is_arg(s) and s.defs is not None}
        for fn, view in views.items()
        if fn is not None
    }

    supply_slots = {
        a.slot.base for a in loads if a.fn == TOTAL_SUPPLY_SELECTOR and a.slot.kind == "var"
    }

    def rmw_store(view: FnView, a: StorageAccess) -> bool:
        if a.slot.key is None:
            return False
        key_src = view.derives(a.slot.key, lambda s: is_arg(s) or is_caller(s))
        if key_src is None:
            return False
        for s in view.ancestors(a.value):
            if s.op == "SLOAD" and a.slot in view.slots.get(s.offset, ()):
                return True
        return False

    balance_bases: set[int] = set()
    generic_ptf: set[int | None] = set()
    for fn, view in views.items():
        rmw = [
            a
            for a in stores
            if a.fn == fn and a.slot.kind == "map" and (fn, a.offset) not in guarded and rmw_store(view, a)
        ]
        if fn in TRANSFER_SELECTORS:
            balance_bases.update(a.slot.base for a in rmw)
        by_base: dict[int, set[str]] = {}
        for a in rmw:
            by_base.setdefault(a.slot.base, set()).add(a.slot.key)
        if fn is not None and any(len(keys) >= 2 for keys in by_base.values()):
            generic_ptf.add(fn)
            if not (TRANSFER_SELECTORS & set(views)):
                balance_bases.update(b for b, keys in by_base.items() if len(keys) >= 2)
    if not balance_bases:
        balance_bases = {
            a.slot.base for a in loads if a.fn == BALANCE_OF_SELECTOR and a.slot.kind == "map"
        }
    ptf = {fn for fn in views if fn in TRANSFER_SELECTORS} | generic_ptf

    tainted: dict[int | None, set[str]] = {}
    fumv: list[tuple[int | None, Stmt, str]] = []
    tv: set[tuple[int | None, int]] = set()
    facts = Facts(
        scg, views, revert_only, guards, guarded, df, vc, iz, loads, stores, ptf, pfav, pumv, pumd,
        fumv, tv, balance_bases, supply_slots, tainted,
    )
    for fn, view in views.items():
        seeds = []
        for s in view.stmts:
            if s.op != "SLOAD" or s.defs is None:
                continue
            for slot in view.slots.get(s.offset, ()):
                if facts.owner_controlled(slot):
                    fumv.append((fn, s, slot.storage_node()))
                    seeds.append(s.defs)
        tainted[fn] = view.forward(seeds)
        if fn in ptf:
            for s in view.stmts:
                if s.op != "MUL" or not set(s.uses) & tainted[fn]:
                    continue
                for u in s.uses:
                    for a in view.ancestors(u):
                        if a.op == "SLOAD":
                            for slot in view.slots.get(a.offset, ()):
                                if slot.kind == "var" and slot.base in pumv:
                                    tv.add((fn, slot.base))
    return facts


def is_transfer_log(s: Stmt) -> bool:
    return s.op in ("LOG3", "LOG4") and len(s.consts) > 2 and s.consts[2] == TRANSFER_TOPIC
