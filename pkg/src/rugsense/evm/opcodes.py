"""EVM opcode table: byte -> (mnemonic, stack inputs, stack outputs)."""

from __future__ import annotations

from typing import NamedTuple


class OpInfo(NamedTuple):
    byte: int
    name: str
    pops: int
    pushes: int


_BASE = [
    (0x00, "STOP", 0, 0),
    (0x01, "ADD", 2, 1),
    (0x02, "MUL", 2, 1),
    (0x03, "SUB", 2, 1),
    (0x04, "DIV", 2, 1),
    (0x05, "SDIV", 2, 1),
    (0x06, "MOD", 2, 1),
    (0x07, "SMOD", 2, 1),
    (0x08, "ADDMOD", 3, 1),
    (0x09, "MULMOD", 3, 1),
    (0x0A, "EXP", 2, 1),
    (0x0B, "SIGNEXTEND", 2, 1),
    (0x10, "LT", 2, 1),
    (0x11, "GT", 2, 1),
    (0x12, "SLT", 2, 1),
    (0x13, "SGT", 2, 1),
    (0x14, "EQ", 2, 1),
    (0x15, "ISZERO", 1, 1),
    (0x16, "AND", 2, 1),
    (0x17, "OR", 2, 1),
    (0x18, "XOR", 2, 1),
    (0x19, "NOT", 1, 1),
    (0x1A, "BYTE", 2, 1),
    (0x1B, "SHL", 2, 1),
    (0x1C, "SHR", 2, 1),
    (0x1D, "SAR", 2, 1),
    (0x20, "SHA3", 2, 1),
    (0x30, "ADDRESS", 0, 1),
    (0x31, "BALANCE", 1, 1),
    (0x32, "ORIGIN", 0, 1),
    (0x33, "CALLER", 0, 1),
    (0x34, "CALLVALUE", 0, 1),
    (0x35, "CALLDATALOAD", 1, 1),
    (0x36, "CALLDATASIZE", 0, 1),
    (0x37, "CALLDATACOPY", 3, 0),
    (0x38, "CODESIZE", 0, 1),
    (0x39, "CODECOPY", 3, 0),
    (0x3A, "GASPRICE", 0, 1),
    (0x3B, "EXTCODESIZE", 1, 1),
    (0x3C, "EXTCODECOPY", 4, 0),
    (0x3D, "RETURNDATASIZE", 0, 1),
    (0x3E, "RETURNDATACOPY", 3, 0),
    (0x3F, "EXTCODEHASH", 1, 1),
    (0x40, "BLOCKHASH", 1, 1),
    (0x41, "COINBASE", 0, 1),
    (0x42, "TIMESTAMP", 0, 1),
    (0x43, "NUMBER", 0, 1),
    (0x44, "PREVRANDAO", 0, 1),
    (0x45, "GASLIMIT", 0, 1),
    (0x46, "CHAINID", 0, 1),
    (0x47, "SELFBALANCE", 0, 1),
    (0x48, "BASEFEE", 0, 1),
    (0x49, "BLOBHASH", 1, 1),
    (0x4A, "BLOBBASEFEE", 0, 1),
    (0x50, "POP", 1, 0),
    (0x51, "MLOAD", 1, 1),
    (0x52, "MSTORE", 2, 0),
    (0x53, "MSTORE8", 2, 0),
    (0x54, "SLOAD", 1, 1),
    (0x55, "SSTORE", 2, 0),
    (0x56, "JUMP", 1, 0),
    (0x57, "JUMPI", 2, 0),
    (0x58, "PC", 0, 1),
    (0x59, "MSIZE", 0, 1),
    (0x5A, "GAS", 0, 1),
    (0x5B, "JUMPDEST", 0, 0),
    (0x5C, "TLOAD", 1, 1),
    (0x5D, "TSTORE", 2, 0),
    (0x5E, "MCOPY", 3, 0),
    (0x5F, "PUSH0", 0, 1),
    (0xF0, "CREATE", 3, 1),
    (0xF1, "CALL", 7, 1),
    (0xF2, "CALLCODE", 7, 1),
    (0xF3, "RETURN", 2, 0),
    (0xF4, "DELEGATECALL", 6, 1),
    (0xF5, "CREATE2", 4, 1),
    (0xFA, "STATICCALL", 6, 1),
    (0xFD, "REVERT", 2, 0),
    (0xFE, "INVALID", 0, 0),
    (0xFF, "SELFDESTRUCT", 1, 0),
]


def _build() -> dict[int, OpInfo]:
    table = {b: OpInfo(b, n, i, o) for b, n, i, o in _BASE}
    for k in range(1, 33):
        table[0x5F + k] = OpInfo(0x5F + k, f"PUSH{k}", 0, 1)
    for k in range(1, 17):
        table[0x7F + k] = OpInfo(0x7F + k, f"DUP{k}", k, k + 1)
        table[0x8F + k] = OpInfo(0x8F + k, f"SWAP{k}", k + 1, k + 1)
    for k in range(5):
        table[0xA0 + k] = OpInfo(0xA0 + k, f"LOG{k}", k + 2, 0)
    return table


OPCODES: dict[int, OpInfo] = _build()
BY_NAME: dict[str, OpInfo] = {info.name: info for info in OPCODES.values()}
# Common alias used by many disassemblers.
BY_NAME["KECCAK256"] = BY_NAME["SHA3"]
BY_NAME["DIFFICULTY"] = BY_NAME["PREVRANDAO"]

TERMINATORS = frozenset({"JUMP", "JUMPI", "STOP", "RETURN", "REVERT", "SELFDESTRUCT", "INVALID"})
HALTS = frozenset({"STOP", "RETURN", "REVERT", "SELFDESTRUCT", "INVALID"})
CALLS = frozenset({"CALL", "CALLCODE", "DELEGATECALL", "STATICCALL"})

# keccak256("Transfer(address,address,uint256)")
TRANSFER_TOPIC = 0xDDF252AD1BE2C89B69C2B068FC378DAA952BA7F163C4A11628F55A4DF523B3EF
# keccak256("Approval(address,address,uint256)")
APPROVAL_TOPIC = 0x8C5BE1E5EBEC7D5BD14F71427D1E84F3DD0314C0F7B2291E5B200AC8C7C3B925

ERC20_SELECTORS = {
    "totalSupply": 0x18160DDD,
    "balanceOf": 0x70A08231,
    "transfer": 0xA9059CBB,
    "transferFrom": 0x23B872DD,
    "approve": 0x095EA7B3,
    "allowance": 0xDD62ED3E,
}


def push_width(name: str) -> int:
    """Immediate byte count for PUSHn (0 for anything else, including PUSH0)."""
    if name.startswith("PUSH") and name != "PUSH0":
        return int(name[4:])
    return 0
