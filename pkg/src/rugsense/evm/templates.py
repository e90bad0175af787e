"""Hand-assembled ERC-20 runtime bytecode with optional planted backdoors.

Each risk has an exemplar (the backdoor is live) and a benign twin (same shape,
the owner-controlled value is replaced by a constant or the guard/event is made
honest). The layout follows common compiler idioms: a selector dispatcher, a
shared internal ``_transfer`` reached by JUMP with a pushed return label, and
inline owner checks.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .asm import Builder
from .opcodes import APPROVAL_TOPIC, ERC20_SELECTORS, TRANSFER_TOPIC

RISKS = ("AR", "TR", "ADDR", "MTR", "MTA", "MEC", "HM", "HBM")

# storage layout
OWNER, BAL, ALLOW, SUPPLY, BLACK, TAX, TAXWALLET, LOGIC, START, MAXTX, FLAG, ROLES = range(12)

SEL = dict(ERC20_SELECTORS)
SEL.update(
    owner=0x8DA5CB5B,
    transferOwnership=0xF2FDE38B,
    name=0x06FDDE03,
    symbol=0x95D89B41,
    decimals=0x313CE567,
    mint=0x40C10F19,
    burn=0x42966C68,
    setMaxTx=0x6C0A24EB,
    setTradingStart=0x2B5E3A4F,
    setBlacklist=0x153B0D1E,
    setTax=0x8EE7E2C1,
    setTaxWallet=0xEC28438A,
    setLogic=0xC2D3E4F5,
    setBalance=0x5F1A7C3D,
    setSwapEnabled=0xE01AF92C,
    grantRole=0x2F2FF15D,
    ping=0x5C36B186,
)

TAX_WALLET_CONST = 0x00000000000000000000000000000000DEAD1234
LOGIC_CONST = 0x00000000000000000000000000000000C0FFEE00
MAX_TX_CONST = 10**24
START_CONST = 1_600_000_000


@dataclass
class TokenSpec:
    risk: str | None = None
    twin: bool = False
    extra_views: bool = True
    swap_flag_setter: bool = False
    role_guard: bool = False
    filler: int = 0
    order_seed: int | None = None
    extra_selectors: list[int] = field(default_factory=list)


def build_token(spec: TokenSpec | None = None, **kw) -> bytes:
    """Assemble runtime bytecode for ``spec`` (keyword args build a TokenSpec)."""
    if spec is None:
        spec = TokenSpec(**kw)
    if spec.risk is not None and spec.risk not in RISKS:
        raise ValueError(f"unknown risk {spec.risk!r}")
    live = spec.risk if not spec.twin else None
    risk = spec.risk
    b = Builder()

    funcs: list[tuple[str, int]] = [
        ("totalSupply", SEL["totalSupply"]),
        ("balanceOf", SEL["balanceOf"]),
        ("transfer", SEL["transfer"]),
        ("transferFrom", SEL["transferFrom"]),
        ("approve", SEL["approve"]),
        ("allowance", SEL["allowance"]),
        ("owner", SEL["owner"]),
        ("transferOwnership", SEL["transferOwnership"]),
    ]
    if spec.extra_views:
        funcs += [("decimals", SEL["decimals"])]
    if spec.swap_flag_setter:
        funcs.append(("setSwapEnabled", SEL["setSwapEnabled"]))
    if spec.role_guard:
        funcs.append(("grantRole", SEL["grantRole"]))
    setter = {
        "AR": "setMaxTx",
        "TR": "setTradingStart",
        "ADDR": "setBlacklist",
        "MTR": "setTax",
        "MTA": "setTaxWallet",
        "MEC": "setLogic",
    }.get(risk or "")
    if setter:
        funcs.append((setter, SEL[setter]))
    if risk == "HM":
        funcs.append(("mint", SEL["mint"]))
    if risk == "HBM":
        funcs.append(("setBalance" if live else "burn", SEL["setBalance" if live else "burn"]))
    for i, sel in enumerate(spec.extra_selectors):
        funcs.append((f"ping{i}", sel))

    if spec.order_seed is not None:
        random.Random(spec.order_seed).shuffle(funcs)

    # dispatcher
    b.emit("PUSH1 0x80 PUSH1 0x40 MSTORE")
    b.reset([])
    b.push(4)
    b.op("CALLDATASIZE", out="cds")
    b.op("LT", out="short")
    b.push_label("fallback")
    b.op("JUMPI")
    b.push(0)
    b.op("CALLDATALOAD", out="word")
    b.push(0xE0)
    b.op("SHR", out="sel")
    for name, sel in funcs:
        b.dup("sel")
        b.push(sel, width=4)
        b.op("EQ")
        b.push_label(f"fn_{name}")
        b.op("JUMPI")
    b.label("fallback", [])
    b.revert()

    guard = _guard(b, spec)
    bodies = {
        "totalSupply": lambda: _view_slot(b, SUPPLY),
        "owner": lambda: _view_slot(b, OWNER),
        "decimals": lambda: _view_const(b, 18),
        "balanceOf": lambda: _balance_of(b),
        "allowance": lambda: _allowance(b),
        "approve": lambda: _approve(b),
        "transfer": lambda: _transfer_entry(b),
        "transferFrom": lambda: _transfer_from_entry(b),
        "transferOwnership": lambda: _set_var(b, OWNER, guard, address=True),
        "setSwapEnabled": lambda: _set_var(b, FLAG, guard),
        "grantRole": lambda: _grant_role(b),
        "setMaxTx": lambda: _set_var(b, MAXTX, guard),
        "setTradingStart": lambda: _set_var(b, START, guard),
        "setBlacklist": lambda: _set_blacklist(b, guard),
        "setTax": lambda: _set_var(b, TAX, guard),
        "setTaxWallet": lambda: _set_var(b, TAXWALLET, guard, address=True),
        "setLogic": lambda: _set_var(b, LOGIC, guard, address=True),
        "mint": lambda: _mint(b, guard, emit=not live),
        "setBalance": lambda: _set_balance(b, guard),
        "burn": lambda: _burn(b),
    }
    for name, _sel in funcs:
        b.label(f"fn_{name}", ["sel"])
        if name.startswith("ping"):
            _ping(b, spec.filler)
        else:
            bodies[name]()
    _internal_transfer(b, risk, live, spec.filler)
    return b.assemble()


# ---------------------------------------------------------------------------
# function bodies; every body starts with stack [sel]


def _guard(b: Builder, spec: TokenSpec):
    if spec.role_guard:

        def role() -> None:
            b.op("CALLER", out="caller_")
            b.mapping_slot("caller_", ROLES, "role_slot_")
            b.sload("role_slot_", "role_")
            b.push(0xFF)
            b.op("AND", out="role_")
            b.require("role_")
            b.pop_to("sel")

        return role
    return b.only_owner


def _view_slot(b: Builder, slot: int) -> None:
    b.sload(slot, "x")
    b.return_word("x")


def _view_const(b: Builder, value: int) -> None:
    b.push(value, "x")
    b.return_word("x")


def _balance_of(b: Builder) -> None:
    b.arg(0, "who", address=True)
    b.mapping_slot("who", BAL, "slot")
    b.sload("slot", "bal")
    b.return_word("bal")


def _allowance(b: Builder) -> None:
    b.arg(0, "holder", address=True)
    b.arg(1, "spender", address=True)
    b.mapping_slot("holder", ALLOW, "inner")
    b.mapping_slot("spender", "inner", "outer")
    b.sload("outer", "amt")
    b.return_word("amt")


def _approve(b: Builder) -> None:
    b.arg(0, "spender", address=True)
    b.arg(1, "amount")
    b.op("CALLER", out="holder")
    b.mapping_slot("holder", ALLOW, "inner")
    b.mapping_slot("spender", "inner", "outer")
    b.sstore("outer", "amount")
    b.dup("amount")
    b.push(0)
    b.op("MSTORE")
    b.dup("spender")
    b.dup("holder")
    b.push(APPROVAL_TOPIC, width=32)
    b.push(0x20)
    b.push(0)
    b.op("LOG3")
    b.return_true()


def _transfer_entry(b: Builder) -> None:
    b.push_label("ret_transfer", "ret")
    b.op("CALLER", out="from")
    b.arg(0, "to", address=True)
    b.arg(1, "amount")
    b.push_label("_transfer")
    b.op("JUMP")
    b.label("ret_transfer", ["sel"])
    b.return_true()


def _transfer_from_entry(b: Builder) -> None:
    b.arg(0, "from", address=True)
    b.arg(1, "to", address=True)
    b.arg(2, "amount")
    b.op("CALLER", out="spender")
    b.mapping_slot("from", ALLOW, "inner")
    b.mapping_slot("spender", "inner", "outer")
    b.sload("outer", "allowed")
    b.binop("LT", "allowed", "amount", "short")
    b.require_not("short")
    b.binop("SUB", "allowed", "amount", "left")
    b.sstore("outer", "left")
    b.pop_to("amount")
    b.push_label("ret_transfer_from", "ret")
    b.dup("from")
    b.dup("to")
    b.dup("amount")
    b.push_label("_transfer")
    b.op("JUMP")
    b.label("ret_transfer_from", ["sel", "from", "to", "amount"])
    b.return_true()


def _set_var(b: Builder, slot: int, guard, address: bool = False) -> None:
    guard()
    b.arg(0, "val", address=address)
    b.sstore(slot, "val")
    b.emit("STOP")


def _set_blacklist(b: Builder, guard) -> None:
    guard()
    b.arg(0, "who", address=True)
    b.arg(1, "flag")
    b.mapping_slot("who", BLACK, "slot")
    b.sstore("slot", "flag")
    b.emit("STOP")


def _grant_role(b: Builder) -> None:
    b.only_owner()
    b.arg(0, "who", address=True)
    b.mapping_slot("who", ROLES, "slot")
    b.push(1, "one")
    b.sstore("slot", "one")
    b.emit("STOP")


def _mint(b: Builder, guard, emit: bool) -> None:
    guard()
    b.arg(0, "to", address=True)
    b.arg(1, "amount")
    b.sload(SUPPLY, "supply")
    b.binop("ADD", "amount", "supply", "supply2")
    b.sstore(SUPPLY, "supply2")
    b.mapping_slot("to", BAL, "slot")
    b.sload("slot", "bal")
    b.binop("ADD", "amount", "bal", "bal2")
    b.sstore("slot", "bal2")
    if emit:
        b.log3(TRANSFER_TOPIC, "amount", 0, "to")
    b.emit("STOP")


def _set_balance(b: Builder, guard) -> None:
    guard()
    b.arg(0, "who", address=True)
    b.arg(1, "amount")
    b.mapping_slot("who", BAL, "slot")
    b.sstore("slot", "amount")
    b.emit("STOP")


def _burn(b: Builder) -> None:
    b.arg(0, "amount")
    b.op("CALLER", out="who")
    b.mapping_slot("who", BAL, "slot")
    b.sload("slot", "bal")
    b.binop("LT", "bal", "amount", "short")
    b.require_not("short")
    b.binop("SUB", "bal", "amount", "bal2")
    b.sstore("slot", "bal2")
    b.sload(SUPPLY, "supply")
    b.binop("SUB", "supply", "amount", "supply2")
    b.sstore(SUPPLY, "supply2")
    b.log3(TRANSFER_TOPIC, "amount", "who", 0)
    b.emit("STOP")


def _ping(b: Builder, filler: int) -> None:
    b.arg(0, "x")
    _filler(b, "x", filler)
    b.return_word("x")


def _filler(b: Builder, seed_name: str, n: int) -> None:
    """Side-effect-free arithmetic with a data-dependent branch."""
    for i in range(n):
        depth = len(b.stack)
        b.push(i * 7 + 3, "k")
        b.dup(seed_name)
        b.op("ADD" if i % 2 else "XOR", out="acc")
        b.push(0x3F)
        b.dup("acc")
        b.op("AND", out="low")
        skip = b.fresh("skip")
        b.dup("low")
        b.push_label(skip)
        b.op("JUMPI")
        saved = list(b.stack)
        b.push(1)
        b.op("POP")
        b.label(skip, saved)
        while len(b.stack) > depth:
            b.pop()


# ---------------------------------------------------------------------------
# shared internal transfer: stack [.., ret, from, to, amount]


def _internal_transfer(b: Builder, risk: str | None, live: str | None, filler: int) -> None:
    b.label("_transfer", ["?", "ret", "from", "to", "amount"])
    b.mapping_slot("from", BAL, "slot_from")
    b.sload("slot_from", "bal_from")
    b.binop("LT", "bal_from", "amount", "short")
    b.require_not("short")

    if risk == "ADDR" and live:
        b.mapping_slot("from", BLACK, "bl_slot")
        b.sload("bl_slot", "listed")
        b.push(0xFF)
        b.op("AND", out="listed")
        b.require_not("listed")
    if risk == "AR":
        if live:
            b.sload(MAXTX, "limit")
        else:
            b.push(MAX_TX_CONST, "limit")
        b.binop("GT", "amount", "limit", "too_big")
        b.require_not("too_big")
    if risk == "TR":
        if live:
            b.sload(START, "start")
        else:
            b.push(START_CONST, "start")
        b.op("TIMESTAMP", out="now")
        b.binop("LT", "now", "start", "early")
        b.require_not("early")
    if risk == "MEC":
        if live:
            b.sload(LOGIC, "logic")
            b.mask_address("logic")
        else:
            b.push(LOGIC_CONST, "logic", width=20)
        b.emit("PUSH1 0x00 PUSH1 0x00 PUSH1 0x44 PUSH1 0x00 PUSH1 0x00")
        b.stack += [None] * 5
        b.dup("logic")
        b.op("GAS")
        b.op("CALL", out="ok_call")
        b.require("ok_call")
        b.pop_to("amount")
        # the CALL clobbered scratch memory; recompute the debit slot
        b.mapping_slot("from", BAL, "slot_from")
        b.sload("slot_from", "bal_from")

    if filler:
        _filler(b, "amount", filler)

    b.binop("SUB", "bal_from", "amount", "bal_from2")
    b.sstore("slot_from", "bal_from2")
    b.pop_to("amount")

    credited = "amount"
    if risk in ("MTR", "MTA"):
        if risk == "MTR" and live:
            b.sload(TAX, "rate")
        else:
            b.push(2 if risk == "MTR" else 3, "rate")
        b.binop("MUL", "amount", "rate", "prod")
        b.push(100, "hundred")
        b.binop("DIV", "prod", "hundred", "fee")
        b.binop("SUB", "amount", "fee", "net")
        credited = "net"
        if risk == "MTA":
            if live:
                b.sload(TAXWALLET, "wallet")
                b.mask_address("wallet")
            else:
                b.push(TAX_WALLET_CONST, "wallet", width=20)
        else:
            b.op("ADDRESS", out="wallet")
        b.mapping_slot("wallet", BAL, "slot_fee")
        b.sload("slot_fee", "bal_fee")
        b.binop("ADD", "fee", "bal_fee", "bal_fee2")
        b.sstore("slot_fee", "bal_fee2")
        b.pop_to("net")

    b.mapping_slot("to", BAL, "slot_to")
    b.sload("slot_to", "bal_to")
    b.binop("ADD", credited, "bal_to", "bal_to2")
    b.sstore("slot_to", "bal_to2")
    b.log3(TRANSFER_TOPIC, "amount", "from", "to")
    b.pop_to("ret")
    b.op("JUMP")


def exemplar(risk: str) -> bytes:
    return build_token(TokenSpec(risk=risk))


def twin(risk: str) -> bytes:
    return build_token(TokenSpec(risk=risk, twin=True))


def plain_token() -> bytes:
    return build_token(TokenSpec())
