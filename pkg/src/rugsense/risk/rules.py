"""Declarative rule catalogue: basic components combined with per-risk plugins."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from ..evm.lifter import SemanticCodeGraph, Stmt
from .facts import Facts, FnView, derive_base_facts, is_arg, is_caller, is_transfer_log, through_storage


class Risk(str, Enum):
    AR = "AR"
    TR = "TR"
    ADDR = "ADDR"
    MTR = "MTR"
    MTA = "MTA"
    MEC = "MEC"
    HM = "HM"
    HBM = "HBM"


RISK_ORDER = {r: i for i, r in enumerate(Risk)}

CATEGORY = {
    Risk.AR: "SaleRestrict",
    Risk.TR: "SaleRestrict",
    Risk.ADDR: "SaleRestrict",
    Risk.MTR: "VariableManipulation",
    Risk.MTA: "VariableManipulation",
    Risk.MEC: "VariableManipulation",
    Risk.HM: "BalanceTamper",
    Risk.HBM: "BalanceTamper",
}

RISK_NAMES = {
    Risk.AR: "amount restrict",
    Risk.TR: "timestamp restrict",
    Risk.ADDR: "address restrict",
    Risk.MTR: "modifiable tax rate",
    Risk.MTA: "modifiable tax address",
    Risk.MEC: "modifiable external call",
    Risk.HM: "hidden mint",
    Risk.HBM: "hidden balance modification",
}


@dataclass
class RiskFinding:
    risk: Risk
    cb: list[int]
    cf: list[tuple[int, int]]
    witness: list[str]
    sources: list[int] = field(default_factory=list)
    sinks: list[int] = field(default_factory=list)

    @property
    def category(self) -> str:
        return CATEGORY[self.risk]

    def to_json(self) -> dict:
        return {
            "risk": self.risk.value,
            "category": self.category,
            "cb": list(self.cb),
            "cf": [list(e) for e in self.cf],
            "witness": "; ".join(self.witness),
        }


@dataclass
class _Match:
    risk: Risk
    sources: list[int]
    sink: int
    note: str


def _fn_name(fn: int | None) -> str:
    return "fallback" if fn is None else f"{fn:#010x}"


# ---------------------------------------------------------------------------
# critical flows


def shortest_path(edges: list[tuple[int, int]], src: int, dst: int) -> list[int] | None:
    """Shortest path by block count; ties broken by lexicographically smallest block ids."""
    pred: dict[int, list[int]] = {}
    succ: dict[int, list[int]] = {}
    for a, b in edges:
        pred.setdefault(b, []).append(a)
        succ.setdefault(a, []).append(b)
    dist = {dst: 0}
    queue = deque([dst])
    while queue:
        x = queue.popleft()
        for y in pred.get(x, ()):
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    if src not in dist:
        return None
    path = [src]
    cur = src
    while cur != dst:
        cur = min(n for n in succ[cur] if dist.get(n) == dist[cur] - 1)
        path.append(cur)
    return path


# ---------------------------------------------------------------------------
# plugins


def _owner_loads(facts: Facts, view: FnView, vid: str) -> list[Stmt]:
    out = []
    for s in view.ancestors(vid):
        if s.op == "SLOAD" and any(facts.owner_controlled(sl) for sl in view.slots.get(s.offset, ())):
            out.append(s)
    return out


def _sale_restrict(facts: Facts, fn: int | None, view: FnView) -> list[_Match]:
    tainted = facts.tainted[fn]
    out: list[_Match] = []
    for vfn, s, a, b in facts.vc:
        if vfn != fn:
            continue
        for mine, other in ((a, b), (b, a)):
            if other not in tainted:
                continue
            arg = view.derives(mine, is_arg, stop=through_storage)
            if arg is not None and view.derives(other, is_arg, stop=through_storage) is None:
                srcs = [arg.block] + [x.block for x in _owner_loads(facts, view, other)]
                out.append(_Match(Risk.AR, srcs, s.block, f"{_fn_name(fn)}: argument {arg.defs} {s.op} owner-set {other} at {s.offset:#x}"))
            ts = view.derives(mine, lambda x: x.op == "TIMESTAMP")
            if ts is not None:
                srcs = [ts.block] + [x.block for x in _owner_loads(facts, view, other)]
                out.append(_Match(Risk.TR, srcs, s.block, f"{_fn_name(fn)}: TIMESTAMP {s.op} owner-set {other} at {s.offset:#x}"))

    # ADDR: owner-managed mapping keyed by the sender/argument, zero-tested on a revert path
    for j in view.stmts:
        if j.op != "JUMPI" or len(j.uses) != 2:
            continue
        succs = {b for x, b in view.edges if x == j.block}
        if not succs & facts.revert_only or succs <= facts.revert_only:
            continue
        for z in view.ancestors(j.uses[1]):
            if z.op != "ISZERO":
                continue
            for ld in view.ancestors(z.uses[0], stop=lambda x: x.op == "SLOAD"):
                if ld.op != "SLOAD":
                    continue
                for slot in view.slots.get(ld.offset, ()):
                    if slot.kind not in ("map", "map2") or slot.base not in facts.pumd or slot.key is None:
                        continue
                    key = view.derives(slot.key, lambda x: is_arg(x) or is_caller(x))
                    if key is None:
                        continue
                    out.append(_Match(
                        Risk.ADDR, [key.block], j.block,
                        f"{_fn_name(fn)}: {key.op} {key.defs} keys owner mapping {slot.base:#x}, zero-tested before revert at {j.offset:#x}",
                    ))
    return out


def _variable_manipulation(facts: Facts, fn: int | None, view: FnView) -> list[_Match]:
    tainted = facts.tainted[fn]
    out: list[_Match] = []
    for s in view.stmts:
        if s.op == "MUL" and set(s.uses) & tainted:
            loads = [x for u in s.uses for x in _owner_loads(facts, view, u) if
                     any(sl.kind == "var" for sl in view.slots.get(x.offset, ()))]
            if loads:
                out.append(_Match(Risk.MTR, [x.block for x in loads], s.block, f"{_fn_name(fn)}: owner-set rate reaches MUL at {s.offset:#x}"))
        elif s.op == "SSTORE":
            slot_v = s.uses[0]
            for sl in view.slots.get(s.offset, ()):
                if sl.kind == "map" and sl.base in facts.balance_bases and slot_v in tainted:
                    loads = _owner_loads(facts, view, slot_v)
                    out.append(_Match(Risk.MTA, [x.block for x in loads], s.block, f"{_fn_name(fn)}: owner-set address selects balance slot at {s.offset:#x}"))
        elif s.op in ("CALL", "CALLCODE", "DELEGATECALL", "STATICCALL") and len(s.uses) >= 2:
            target = s.uses[1]
            if target not in tainted:
                continue
            loads = _owner_loads(facts, view, target)
            moves_value = s.op in ("CALL", "CALLCODE") and s.consts[2] != 0
            risk = Risk.MTA if moves_value else Risk.MEC
            out.append(_Match(risk, [x.block for x in loads], s.block, f"{_fn_name(fn)}: owner-set address is {s.op} target at {s.offset:#x}"))
    return out


def _balance_tamper(facts: Facts, fn: int | None, view: FnView) -> list[_Match]:
    out: list[_Match] = []
    guard_blocks = sorted({g.block for g in facts.guards if g.fn == fn})
    stores = [a for a in facts.st if a.fn == fn and (fn, a.offset) in facts.guarded_stores]
    writes_supply = any(a.slot.kind == "var" and a.slot.base in facts.supply_slots for a in facts.st if a.fn == fn)
    log_blocks = {s.block for s in view.stmts if is_transfer_log(s)}
    exits = {
        b for b in {x for e in view.edges for x in e} | {view.entry}
        if b in facts.scg.blocks and facts.scg.blocks[b].last is not None
        and facts.scg.blocks[b].last.opcode in ("STOP", "RETURN")
    }
    for a in stores:
        if a.slot.kind == "var" and a.slot.base in facts.supply_slots:
            if _silent_path(view, a.block, log_blocks, exits):
                out.append(_Match(Risk.HM, guard_blocks, a.block, f"{_fn_name(fn)}: guarded supply write at {a.offset:#x} without Transfer event"))
        elif (
            a.slot.kind == "map"
            and a.slot.base in facts.balance_bases
            and fn not in facts.ptf
            and not writes_supply
            and a.slot.key is not None
        ):
            arg = view.derives(a.slot.key, is_arg)
            if arg is not None:
                out.append(_Match(Risk.HBM, [arg.block] + guard_blocks, a.block, f"{_fn_name(fn)}: guarded balance write keyed by argument at {a.offset:#x}"))
    return out


def _silent_path(view: FnView, block: int, log_blocks: set[int], exits: set[int]) -> bool:
    """True if entry -> block -> successful exit exists without touching a Transfer log."""
    if block in log_blocks:
        return False
    edges = [(a, b) for a, b in view.edges if a not in log_blocks and b not in log_blocks]
    succ: dict[int, list[int]] = {}
    for a, b in edges:
        succ.setdefault(a, []).append(b)

    def reach(start: int) -> set[int]:
        seen = {start}
        stack = [start]
        while stack:
            x = stack.pop()
            for y in succ.get(x, ()):
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return seen

    if view.entry in log_blocks or block not in reach(view.entry):
        return False
    return bool(reach(block) & exits)


# ---------------------------------------------------------------------------


def match_rules(facts: Facts, scg: SemanticCodeGraph) -> list[RiskFinding]:
    matches: list[_Match] = []
    for fn, view in facts.views.items():
        if fn in facts.ptf:
            if facts.tainted[fn]:
                matches += _sale_restrict(facts, fn, view)
                matches += _variable_manipulation(facts, fn, view)
        matches += _balance_tamper(facts, fn, view)

    edges = scg.edges()
    by_risk: dict[Risk, list[_Match]] = {}
    for m in matches:
        by_risk.setdefault(m.risk, []).append(m)
    findings = []
    for risk in sorted(by_risk, key=RISK_ORDER.__getitem__):
        cb: set[int] = set()
        cf: set[tuple[int, int]] = set()
        srcs: set[int] = set()
        sinks: set[int] = set()
        notes: list[str] = []
        for m in by_risk[risk]:
            cb.add(m.sink)
            sinks.add(m.sink)
            for s in m.sources:
                cb.add(s)
                srcs.add(s)
                path = shortest_path(edges, s, m.sink)
                if path:
                    cf.update(zip(path, path[1:]))
            if m.note not in notes:
                notes.append(m.note)
        findings.append(RiskFinding(risk, sorted(cb), sorted(cf), notes, sorted(srcs), sorted(sinks)))
    return findings


def detect(scg: SemanticCodeGraph) -> list[RiskFinding]:
    return match_rules(derive_base_facts(scg), scg)
